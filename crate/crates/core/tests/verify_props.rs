use ndarray::Array2;
use privloop_core::blp::BudgetLedger;
use privloop_core::stats::rank_auc;
use privloop_core::tracegen::SensingSource;
use privloop_core::verify::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_force_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in pos {
        for n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

#[test]
fn identical_distributions_give_chance_auc() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let members: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let others: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let auc = mia_attack(&members, &others).unwrap();
    assert!((auc - 0.5).abs() <= 0.02, "{auc}");
    assert!(mia_attack(&[], &others).is_err());
}

#[test]
fn random_labels_give_baseline_utility() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 2000;
    let prevalence = 0.3;
    let x = Array2::from_shape_fn((n, 4), |_| rng.random::<f64>());
    let y: Vec<bool> = (0..n).map(|_| rng.random_bool(prevalence)).collect();
    let report = utility_eval(&x, &y, 42).unwrap();
    // Predicting every row positive is the best label-blind F1.
    let ceiling = 2.0 * prevalence / (1.0 + prevalence);
    assert!(report.f1 <= ceiling + 0.05, "{report:?}");
    assert!((report.roc_auc - 0.5).abs() <= 0.06, "{report:?}");
}

#[test]
fn independent_property_is_not_inferred() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let n = 2000;
    let public = Array2::from_shape_fn((n, 3), |_| rng.random::<f64>());
    let probs: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let property: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    let pia = pia_attack(&probs, &public, &property, 43).unwrap();
    assert!(pia.advantage() <= 0.03, "{pia:?}");
    assert!((pia.prior - 0.6).abs() <= 0.05);
}

#[test]
fn dependent_property_is_inferred() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let n = 2000;
    let property: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let public = Array2::from_shape_fn((n, 1), |(i, _)| if property[i] { 0.7 } else { 0.3 } + 0.1 * rng.random::<f64>());
    let probs = vec![0.5; n];
    let pia = pia_attack(&probs, &public, &property, 44).unwrap();
    assert!(pia.advantage() > 0.3, "{pia:?}");
}

#[test]
fn feedback_weights_respect_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    for _ in 0..100_000 {
        let mut state = FeedbackState {
            alpha: rng.random_range(1.0..=50.0),
            beta: rng.random_range(1.0..=100.0),
            step: rng.random_range(1.0..3.0),
            ..FeedbackState::default()
        };
        for _ in 0..20 {
            state = feedback_update(&state, rng.random(), rng.random());
            assert!((1.0..=50.0).contains(&state.alpha), "{state:?}");
            assert!((1.0..=100.0).contains(&state.beta), "{state:?}");
        }
    }
}

#[test]
fn feedback_direction() {
    let s = FeedbackState::default();
    let weak_privacy = feedback_update(&s, 0.5, 1.0);
    assert!(weak_privacy.alpha > s.alpha && weak_privacy.beta == s.beta);
    let weak_utility = feedback_update(&s, 1.0, 0.5);
    assert!(weak_utility.beta > s.beta && weak_utility.alpha == s.alpha);
}

#[test]
fn reconstruction_error_is_zero_only_on_agreement() {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let noisy: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..10.0)).collect();
    for d in default_denoisers() {
        let recovered = d.apply(&noisy).unwrap();
        assert_eq!(reconstruction_attack(&noisy, &recovered, &d).unwrap(), 0.0);
        let mut off = recovered.clone();
        off[30] += 1.0;
        assert!(reconstruction_attack(&noisy, &off, &d).unwrap() > 0.0);
    }
}

#[test]
fn release_books_one_budget_per_field() {
    let rows = SensingSource::new(46).rows(0, 0..50);
    let mut ledger = BudgetLedger::new();
    let noisy = release(&rows, 2.5, 46, &mut ledger).unwrap();
    assert_eq!(noisy.len(), 50);
    assert_eq!(ledger.len(), 200);
    assert_eq!(ledger.total(), 500.0);
    let again = release(&rows, 2.5, 46, &mut BudgetLedger::new()).unwrap();
    assert_eq!(noisy, again);
}

proptest! {
    #[test]
    fn rank_auc_is_the_mann_whitney_statistic(
        pos in prop::collection::vec(0u8..20, 1..100),
        neg in prop::collection::vec(0u8..20, 1..100),
    ) {
        // Small integer scores force plenty of ties.
        let pos: Vec<f64> = pos.into_iter().map(f64::from).collect();
        let neg: Vec<f64> = neg.into_iter().map(f64::from).collect();
        let got = rank_auc(&pos, &neg);
        prop_assert!((got - brute_force_auc(&pos, &neg)).abs() <= 1e-12);
    }

    #[test]
    fn feedback_is_idempotent_when_satisfied(
        alpha in 1.0f64..50.0,
        beta in 1.0f64..100.0,
        privacy in 0.8f64..=1.0,
        utility in 0.85f64..=2.0,
    ) {
        let s = FeedbackState { alpha, beta, ..FeedbackState::default() };
        let once = feedback_update(&s, privacy, utility);
        prop_assert_eq!(once, s);
        prop_assert_eq!(feedback_update(&once, privacy, utility), once);
    }

    #[test]
    fn reconstruction_error_is_nonnegative(
        series in prop::collection::vec(-50.0f64..50.0, 16..80),
        noise in prop::collection::vec(-5.0f64..5.0, 80),
    ) {
        let noisy: Vec<f64> = series.iter().zip(&noise).map(|(a, b)| a + b).collect();
        for d in default_denoisers() {
            if d.window() <= series.len() {
                prop_assert!(reconstruction_attack(&noisy, &series, &d).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn privacy_strength_in_unit_interval(auc in 0.0f64..=1.0) {
        let s = privacy_strength(auc);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((s - privacy_strength(1.0 - auc)).abs() <= 1e-12);
    }
}
