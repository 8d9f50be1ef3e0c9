//! Privacy-budget decision process: reward, state transition, the closed-form
//! optimum used as an oracle, and the TD3 agent that learns the policy.

mod td3;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use td3::{
    CurvePoint, PrivacyEnv, ReplayBuffer, Td3Agent, Td3Config, TrainingCurve, Transition,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Privacy weight.
    pub alpha: f64,
    /// Utility weight.
    pub beta: f64,
    /// Energy weight.
    pub lambda_e: f64,
    /// Logistic steepness.
    pub kappa: f64,
    /// Logistic center.
    pub s0: f64,
    /// Budget-headroom exponent, in (0, 1).
    pub delta: f64,
    /// How strongly risk discounts utility loss.
    pub rho: f64,
    /// Sensitivity constant in the utility-loss term.
    pub g0: f64,
    pub eps_min: f64,
    pub eps_max: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            beta: 20.0,
            lambda_e: 0.1,
            kappa: 8.0,
            s0: 0.5,
            delta: 0.7,
            rho: 0.5,
            g0: 1.0,
            eps_min: 1.0,
            eps_max: 5.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_min > 0.0 && self.eps_min < self.eps_max && self.eps_max.is_finite()) {
            return Err(invalid("need 0 < eps_min < eps_max"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!("delta {} outside (0, 1)", self.delta)));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(invalid(format!("rho {} outside [0, 1]", self.rho)));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.lambda_e >= 0.0) {
            return Err(invalid("reward weights must be nonnegative"));
        }
        if !(self.g0 > 0.0) || !self.kappa.is_finite() || !self.s0.is_finite() {
            return Err(invalid("g0 must be positive and kappa, s0 finite"));
        }
        Ok(())
    }

    pub fn span(&self) -> f64 {
        self.eps_max - self.eps_min
    }

    pub fn clip(&self, eps: f64) -> f64 {
        eps.clamp(self.eps_min, self.eps_max)
    }

    fn logistic(&self, s: f64) -> f64 {
        1.0 / (1.0 + (-self.kappa * (s - self.s0)).exp())
    }

    /// Remaining budget headroom in [0, 1]: 1 at `eps_min`, 0 at `eps_max`.
    fn headroom(&self, eps: f64) -> f64 {
        ((self.eps_max - eps) / self.span()).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionParams {
    pub eta: f64,
    pub gamma_step: f64,
    pub sigma_zeta: f64,
}

impl Default for TransitionParams {
    fn default() -> Self {
        Self {
            eta: 0.2,
            gamma_step: 2.0,
            sigma_zeta: 0.1,
        }
    }
}

impl TransitionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(invalid(format!("eta {} outside (0, 1]", self.eta)));
        }
        if !(self.gamma_step > 0.0) || !(self.sigma_zeta >= 0.0) {
            return Err(invalid("gamma_step must be positive and sigma_zeta nonnegative"));
        }
        Ok(())
    }
}

/// Logistic risk response times the power of the remaining budget headroom.
pub fn privacy_gain(eps: f64, s: f64, p: &RewardParams) -> f64 {
    p.logistic(s) * p.headroom(eps).powf(p.delta)
}

pub fn utility_loss(eps: f64, s: f64, p: &RewardParams) -> f64 {
    (1.0 - p.rho * s) * (p.g0 / eps).powi(2)
}

/// Trapezoidal time average of a power series. A single sample is its own average.
pub fn mean_power(times: &[f64], power: &[f64]) -> Result<f64> {
    if times.is_empty() || times.len() != power.len() {
        return Err(invalid("power window must be nonempty with one time per sample"));
    }
    let span = times[times.len() - 1] - times[0];
    if span <= 0.0 {
        return if times.len() == 1 {
            Ok(power[0])
        } else {
            Err(invalid("power window timestamps must increase"))
        };
    }
    let area: f64 = times
        .windows(2)
        .zip(power.windows(2))
        .map(|(t, p)| 0.5 * (p[0] + p[1]) * (t[1] - t[0]))
        .sum();
    Ok(area / span)
}

/// Mean power normalized by `ceiling` and clamped to [0, 1].
pub fn energy_cost(times: &[f64], power: &[f64], ceiling: f64) -> Result<f64> {
    if !(ceiling > 0.0) {
        return Err(invalid("power ceiling must be positive"));
    }
    Ok((mean_power(times, power)? / ceiling).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub privacy_gain: f64,
    pub utility_loss: f64,
    pub energy: f64,
    pub total: f64,
}

pub fn reward_terms(eps: f64, s: f64, p: &RewardParams, energy: f64) -> RewardTerms {
    let pg = privacy_gain(eps, s, p);
    let ul = utility_loss(eps, s, p);
    RewardTerms {
        privacy_gain: pg,
        utility_loss: ul,
        energy,
        total: p.alpha * pg - p.beta * ul - p.lambda_e * energy,
    }
}

pub fn reward(eps: f64, s: f64, p: &RewardParams, energy: f64) -> f64 {
    reward_terms(eps, s, p, energy).total
}

fn signpow(x: f64, gamma: f64) -> f64 {
    x.signum() * x.abs().powf(gamma)
}

/// Moves the risk state toward the headroom target implied by `eps`, plus noise.
pub fn step_transition<R: Rng + ?Sized>(
    s: f64,
    eps: f64,
    rp: &RewardParams,
    tp: &TransitionParams,
    rng: &mut R,
) -> f64 {
    let target = rp.headroom(eps);
    let noise = if tp.sigma_zeta > 0.0 {
        Normal::new(0.0, tp.sigma_zeta).expect("validated sd").sample(rng)
    } else {
        0.0
    };
    (s + tp.eta * signpow(target - s, tp.gamma_step) + noise).clamp(0.0, 1.0)
}

/// Derivative of the reward with respect to the budget (energy held fixed).
pub fn reward_slope(eps: f64, s: f64, p: &RewardParams) -> f64 {
    let h = p.headroom(eps);
    let privacy = -p.alpha * p.logistic(s) * p.delta * h.powf(p.delta - 1.0) / p.span();
    let utility = 2.0 * p.beta * (1.0 - p.rho * s) * p.g0 * p.g0 / eps.powi(3);
    privacy + utility
}

/// True when the reward still rises just above `eps_min`, i.e. the maximizer
/// lies in the interior.
pub fn interior_optimum_exists(s: f64, p: &RewardParams) -> bool {
    let at_min = -p.alpha * p.logistic(s) * p.delta / p.span()
        + 2.0 * p.beta * (1.0 - p.rho * s) * p.g0 * p.g0 / p.eps_min.powi(3);
    at_min > 0.0
}

/// Budget that maximizes the one-step reward at risk `s`.
///
/// The reward is strictly concave in the budget, so the slope has at most one
/// interior root; it is located by bisection to an interval width of 1e-12.
/// Without an interior root the maximum sits at `eps_min`.
pub fn analytic_optimum(s: f64, p: &RewardParams) -> Result<f64> {
    p.validate()?;
    if !interior_optimum_exists(s, p) {
        return Ok(p.eps_min);
    }
    let (mut lo, mut hi) = (p.eps_min, p.eps_max);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if reward_slope(mid, s, p) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reward_components_at_reference_points() {
        let p = RewardParams::default();
        assert_eq!(privacy_gain(5.0, 0.3, &p), 0.0);
        assert!((privacy_gain(1.0, 0.5, &p) - 0.5).abs() < 1e-15);
        assert!((utility_loss(5.0, 0.0, &p) - 0.04).abs() < 1e-15);
        assert!((utility_loss(1.0, 1.0, &p) - 0.5).abs() < 1e-15);
        let zero = RewardParams {
            alpha: 0.0,
            beta: 0.0,
            lambda_e: 0.0,
            ..p
        };
        assert_eq!(reward(2.5, 0.4, &zero, 0.7), 0.0);
    }

    #[test]
    fn transition_fixed_point_and_step() {
        let rp = RewardParams::default();
        let tp = TransitionParams {
            sigma_zeta: 0.0,
            ..TransitionParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((step_transition(0.0, 1.0, &rp, &tp, &mut rng) - 0.2).abs() < 1e-15);
        // eps = 3 puts the target at 0.5
        assert_eq!(step_transition(0.5, 3.0, &rp, &tp, &mut rng), 0.5);
        assert!(step_transition(0.9, 5.0, &rp, &tp, &mut rng) < 0.9);
    }

    #[test]
    fn energy_average() {
        assert_eq!(mean_power(&[0.0, 1.0, 2.0], &[3.0, 3.0, 3.0]).unwrap(), 3.0);
        assert!((mean_power(&[0.0, 4.0], &[0.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(mean_power(&[], &[]).is_err());
        assert_eq!(energy_cost(&[0.0], &[5.0], 10.0).unwrap(), 0.5);
    }

    #[test]
    fn optimum_falls_back_to_lower_bound() {
        let p = RewardParams {
            alpha: 100.0,
            beta: 0.1,
            ..RewardParams::default()
        };
        assert!(!interior_optimum_exists(0.9, &p));
        assert_eq!(analytic_optimum(0.9, &p).unwrap(), p.eps_min);
        let bad = RewardParams {
            delta: 1.0,
            ..RewardParams::default()
        };
        assert!(analytic_optimum(0.5, &bad).is_err());
    }
}
