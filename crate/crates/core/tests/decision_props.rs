use privloop_core::decision::*;
use privloop_core::nn::{Activation, Mlp};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_params(rng: &mut ChaCha8Rng) -> (RewardParams, f64) {
    let eps_min = rng.random_range(0.2..2.0);
    let p = RewardParams {
        alpha: rng.random_range(0.5..20.0),
        beta: rng.random_range(0.5..50.0),
        lambda_e: rng.random_range(0.0..1.0),
        kappa: rng.random_range(1.0..15.0),
        s0: rng.random_range(0.2..0.8),
        delta: rng.random_range(0.05..0.95),
        rho: rng.random_range(0.0..1.0),
        g0: rng.random_range(0.2..2.0),
        eps_min,
        eps_max: eps_min + rng.random_range(1.0..8.0),
    };
    (p, rng.random_range(0.0..1.0))
}

/// Reward written out from its definition, independent of the library.
fn reward_by_hand(eps: f64, s: f64, p: &RewardParams) -> f64 {
    let logistic = 1.0 / (1.0 + (-p.kappa * (s - p.s0)).exp());
    let headroom = (p.eps_max - eps) / (p.eps_max - p.eps_min);
    let gain = logistic * headroom.powf(p.delta);
    let loss = (1.0 - p.rho * s) * (p.g0 / eps) * (p.g0 / eps);
    p.alpha * gain - p.beta * loss
}

/// Slope of the hand-written reward.
fn slope_by_hand(eps: f64, s: f64, p: &RewardParams) -> f64 {
    let logistic = 1.0 / (1.0 + (-p.kappa * (s - p.s0)).exp());
    let headroom = (p.eps_max - eps) / p.span();
    -p.alpha * logistic * p.delta * headroom.powf(p.delta - 1.0) / p.span()
        + 2.0 * p.beta * (1.0 - p.rho * s) * p.g0 * p.g0 / eps.powi(3)
}

/// The slope changes sign at least 0.1% of the span inside both bounds, so
/// the maximizer is resolvable in double precision.
fn well_posed(p: &RewardParams, s: f64) -> bool {
    let margin = 1e-3 * p.span();
    slope_by_hand(p.eps_min + margin, s, p) > 0.0 && slope_by_hand(p.eps_max - margin, s, p) < 0.0
}

fn interior_grid(p: &RewardParams, points: usize) -> impl Iterator<Item = f64> + '_ {
    (1..=points).map(move |k| p.eps_min + p.span() * k as f64 / (points + 1) as f64)
}

#[test]
fn reference_reward_values() {
    let p = RewardParams::default();
    let gain = privacy_gain(3.0, 1.0, &p);
    let expect_gain = (1.0 / (1.0 + (-4.0f64).exp())) * 0.5f64.powf(0.7);
    assert!((gain - expect_gain).abs() < 1e-14);
    assert!((gain - 0.604).abs() < 1e-3, "{gain}");
    let w = reward(3.0, 1.0, &p, 0.0);
    assert!((w - (5.0 * expect_gain - 20.0 * 0.5 / 9.0)).abs() < 1e-13);
    assert!((w - 1.909).abs() < 5e-3, "{w}");
    assert!((utility_loss(3.0, 2.0, &RewardParams { rho: 0.5, ..p })).abs() < 1e-15);
}

#[test]
fn reward_is_strictly_concave_in_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let (p, s) = random_params(&mut rng);
        for eps in interior_grid(&p, 20) {
            let h = 1e-3 * p.span();
            let w = |e: f64| reward(e, s, &p, 0.0);
            let second = (w(eps + h) - 2.0 * w(eps) + w(eps - h)) / (h * h);
            assert!(second < 0.0, "{p:?} s {s} eps {eps}: {second}");
        }
    }
}

#[test]
fn analytic_slope_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..100 {
        let (p, s) = random_params(&mut rng);
        for eps in interior_grid(&p, 20) {
            let h = 1e-4 * p.span();
            let w = |e: f64| reward_by_hand(e, s, &p);
            // Fourth-order central stencil.
            let fd = (-w(eps + 2.0 * h) + 8.0 * w(eps + h) - 8.0 * w(eps - h) + w(eps - 2.0 * h)) / (12.0 * h);
            let slope = reward_slope(eps, s, &p);
            assert!(
                (slope - fd).abs() <= 1e-5 * fd.abs(),
                "{p:?} s {s} eps {eps}: {slope} vs {fd}"
            );
        }
    }
}

#[test]
fn optimum_balances_marginal_gain_and_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut checked = 0;
    while checked < 100 {
        let (p, s) = random_params(&mut rng);
        if !interior_optimum_exists(s, &p) {
            assert_eq!(analytic_optimum(s, &p).unwrap(), p.eps_min);
            continue;
        }
        if !well_posed(&p, s) {
            continue;
        }
        let eps = analytic_optimum(s, &p).unwrap();
        let h = 1e-6 * eps;
        let d = |f: &dyn Fn(f64) -> f64| (f(eps + h) - f(eps - h)) / (2.0 * h);
        let marginal_gain = p.alpha * d(&|e| privacy_gain(e, s, &p));
        let marginal_loss = p.beta * d(&|e| utility_loss(e, s, &p));
        assert!((marginal_gain - marginal_loss).abs() <= 1e-6, "{p:?} s {s} eps {eps}: {marginal_gain} vs {marginal_loss}");
        checked += 1;
    }
}

#[test]
fn infeasible_parameters_sit_on_the_lower_bound() {
    let p = RewardParams {
        alpha: 100.0,
        beta: 0.01,
        ..RewardParams::default()
    };
    assert!(!interior_optimum_exists(0.9, &p));
    assert_eq!(analytic_optimum(0.9, &p).unwrap(), p.eps_min);
    assert!(analytic_optimum(0.5, &RewardParams { delta: 1.0, ..p }).is_err());
}

#[test]
fn transition_examples() {
    let rp = RewardParams::default();
    let still = TransitionParams {
        sigma_zeta: 0.0,
        ..TransitionParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    // eps = 3 puts the headroom target at 0.5.
    assert_eq!(step_transition(0.5, 3.0, &rp, &still, &mut rng), 0.5);
    assert!((step_transition(0.0, rp.eps_min, &rp, &still, &mut rng) - 0.2).abs() < 1e-15);
    let a = step_transition(0.3, 2.0, &rp, &still, &mut rng);
    let b = step_transition(0.3, 2.0, &rp, &still, &mut rng);
    assert_eq!(a, b);
    // Sign-preserving power moves toward a lower target too.
    assert!(step_transition(0.9, 4.0, &rp, &still, &mut rng) < 0.9);
}

#[test]
fn energy_examples() {
    let t: Vec<f64> = (0..11).map(f64::from).collect();
    assert!((mean_power(&t, &[0.7; 11]).unwrap() - 0.7).abs() < 1e-15);
    let ramp: Vec<f64> = t.iter().map(|x| 0.8 * x / 10.0).collect();
    assert!((mean_power(&t, &ramp).unwrap() - 0.4).abs() < 1e-15);
    assert!(mean_power(&[], &[]).is_err());
    assert_eq!(energy_cost(&t, &[3.0; 11], 2.0).unwrap(), 1.0);
}

#[test]
fn soft_update_is_exact_elementwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let source = Mlp::with_widths(&[2, 16, 16, 1], Activation::Tanh, Activation::Identity, &mut rng);
    let before = Mlp::with_widths(&[2, 16, 16, 1], Activation::Tanh, Activation::Identity, &mut rng);
    let tau = 0.005f32;
    let mut target = before.clone();
    target.soft_update_from(&source, tau);
    for ((t, b), s) in target.layers.iter().zip(&before.layers).zip(&source.layers) {
        for ((tv, bv), sv) in t.weight.iter().zip(&b.weight).zip(&s.weight) {
            assert_eq!(*tv, tau * sv + (1.0 - tau) * bv);
        }
        let (tb, bb, sb) = (t.bias.as_ref().unwrap(), b.bias.as_ref().unwrap(), s.bias.as_ref().unwrap());
        for ((tv, bv), sv) in tb.iter().zip(bb).zip(sb) {
            assert_eq!(*tv, tau * sv + (1.0 - tau) * bv);
        }
    }
}

#[test]
fn actions_never_leave_the_budget_interval() {
    let config = Td3Config {
        explore_noise: 3.0,
        ..Td3Config::default()
    };
    let agent = Td3Agent::new(config, RewardParams::default(), 36).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    for _ in 0..100_000 {
        let s = rng.random_range(-0.5..1.5);
        let eps = agent.act(s, true, &mut rng);
        assert!((1.0..=5.0).contains(&eps), "{eps}");
    }
    let s = 0.37;
    assert_eq!(agent.act(s, false, &mut rng), agent.act(s, false, &mut rng));
}

#[test]
fn short_training_with_wide_smoothing_noise_stays_finite() {
    let config = Td3Config {
        episodes: 10,
        steps_per_episode: 50,
        hidden: 16,
        policy_noise: 5.0,
        noise_clip: 0.3,
        ..Td3Config::default()
    };
    let env = PrivacyEnv::new(RewardParams::default(), TransitionParams::default());
    let (agent, curve) = Td3Agent::train(config, &env, 37).unwrap();
    assert_eq!(curve.points.len(), 500);
    assert!(curve.points.iter().all(|p| p.critic1.is_finite() && p.critic2.is_finite() && p.actor.is_finite()));
    assert!(agent.actor.is_finite());
}

proptest! {
    #[test]
    fn replay_buffer_keeps_the_newest(capacity in 1usize..64, pushes in 0usize..300) {
        let mut buf = ReplayBuffer::new(capacity);
        for i in 0..pushes {
            buf.push(Transition { state: i as f64, action: 1.0, reward: 0.0, next_state: 0.0 });
            prop_assert!(buf.len() <= capacity);
        }
        let kept: Vec<f64> = buf.iter().map(|t| t.state).collect();
        let expect: Vec<f64> = (pushes.saturating_sub(capacity)..pushes).map(|i| i as f64).collect();
        prop_assert_eq!(kept, expect);
    }

    #[test]
    fn optimum_beats_every_grid_point(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, s) = random_params(&mut rng);
        let eps = analytic_optimum(s, &p).unwrap();
        let best = reward(eps, s, &p, 0.0);
        for e in interior_grid(&p, 50) {
            prop_assert!(reward(e, s, &p, 0.0) <= best + 1e-12);
        }
    }
}
