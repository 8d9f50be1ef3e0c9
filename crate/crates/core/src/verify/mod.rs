//! Edge-side verification: attacks on released data, downstream utility, and
//! the controller that retunes the reward weights from both.

mod attacks;
mod models;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blp::{perturb_record, sample, BoundedDomain, BudgetLedger, PrivacyBudget};
use crate::error::{invalid, Result};
use crate::stats;
use crate::tracegen::sensing::{sensing_domains, SensingRow, SENSING_FIELDS};

pub use attacks::{mia_attack, pia_attack, reconstruction_attack, Denoiser, PropertyInference};
pub use models::{KernelClassifier, LogisticConfig, LogisticRegression};

/// Bandwidth of the attacked model, in domain-normalized units.
pub const TARGET_BANDWIDTH: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Mia,
    Pia,
    Recon,
}

impl std::str::FromStr for AttackKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mia" => Ok(Self::Mia),
            "pia" => Ok(Self::Pia),
            "recon" => Ok(Self::Recon),
            other => Err(invalid(format!("unknown attack kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub kind: AttackKind,
    /// AUC for membership, accuracy minus prior for property, MAE for reconstruction.
    pub metric: f64,
    pub epsilon: f64,
    pub dataset: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub f1: f64,
    pub roc_auc: f64,
    pub clean_f1: Option<f64>,
}

pub const MIN_UTILITY_ROWS: usize = 100;

/// Trains the logistic classifier on a seeded 70 % split and scores the rest.
pub fn utility_eval(features: &Array2<f64>, labels: &[bool], seed: u64) -> Result<UtilityReport> {
    let n = labels.len();
    if features.nrows() != n {
        return Err(invalid("one label per row required"));
    }
    if n < MIN_UTILITY_ROWS {
        return Err(invalid(format!("utility evaluation needs at least {MIN_UTILITY_ROWS} rows")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, test) = idx.split_at(n * 7 / 10);
    let pick = |rows: &[usize]| rows.iter().map(|&i| labels[i]).collect::<Vec<_>>();
    let model = LogisticRegression::fit(&features.select(Axis(0), train), &pick(train), &LogisticConfig::default())?;
    let truth = pick(test);
    let probs = model.predict_proba(&features.select(Axis(0), test));
    let predicted: Vec<bool> = probs.iter().map(|&p| p > 0.5).collect();
    let (pos, neg): (Vec<(f64, bool)>, Vec<(f64, bool)>) =
        probs.iter().copied().zip(truth.iter().copied()).partition(|(_, t)| *t);
    let roc_auc = if pos.is_empty() || neg.is_empty() {
        0.5
    } else {
        stats::rank_auc(
            &pos.iter().map(|p| p.0).collect::<Vec<_>>(),
            &neg.iter().map(|p| p.0).collect::<Vec<_>>(),
        )
    };
    Ok(UtilityReport {
        f1: stats::f1_score(&predicted, &truth),
        roc_auc,
        clean_f1: None,
    })
}

/// Maps a membership AUC to [0, 1]; 1 means members are indistinguishable.
pub fn privacy_strength(auc: f64) -> f64 {
    (1.0 - 2.0 * (auc - 0.5).abs()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackState {
    pub alpha: f64,
    pub beta: f64,
    /// Minimum acceptable privacy strength.
    pub privacy_threshold: f64,
    /// Minimum acceptable F1 as a fraction of the clean baseline.
    pub utility_threshold: f64,
    pub step: f64,
    pub alpha_bounds: (f64, f64),
    pub beta_bounds: (f64, f64),
}

impl Default for FeedbackState {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            beta: 20.0,
            privacy_threshold: 0.8,
            utility_threshold: 0.85,
            step: 1.1,
            alpha_bounds: (1.0, 50.0),
            beta_bounds: (1.0, 100.0),
        }
    }
}

impl FeedbackState {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi;
        if !(self.step >= 1.0) || !ordered(self.alpha_bounds) || !ordered(self.beta_bounds) {
            return Err(invalid("feedback step must be >= 1 and weight bounds ordered and positive"));
        }
        Ok(())
    }

    pub fn privacy_ok(&self, strength: f64) -> bool {
        strength >= self.privacy_threshold
    }

    pub fn utility_ok(&self, relative_f1: f64) -> bool {
        relative_f1 >= self.utility_threshold
    }
}

/// Raises α when privacy strength falls short and β when relative utility
/// falls short; both may fire in one call. Weights stay within their bounds.
pub fn feedback_update(state: &FeedbackState, privacy: f64, relative_utility: f64) -> FeedbackState {
    let mut next = *state;
    if !state.privacy_ok(privacy) {
        next.alpha = (state.alpha * state.step).clamp(state.alpha_bounds.0, state.alpha_bounds.1);
    }
    if !state.utility_ok(relative_utility) {
        next.beta = (state.beta * state.step).clamp(state.beta_bounds.0, state.beta_bounds.1);
    }
    next
}

/// Domain-normalized feature matrix.
pub fn normalized(rows: &[[f64; SENSING_FIELDS]]) -> Array2<f64> {
    let domains = sensing_domains();
    Array2::from_shape_fn((rows.len(), SENSING_FIELDS), |(i, j)| {
        (rows[i][j] - domains[j].lower) / domains[j].sensitivity()
    })
}

/// Perturbs every field of every row at budget `eps`.
pub fn release(rows: &[SensingRow], eps: f64, seed: u64, ledger: &mut BudgetLedger) -> Result<Vec<[f64; SENSING_FIELDS]>> {
    let domains = sensing_domains();
    let budgets = vec![PrivacyBudget::new(eps)?; SENSING_FIELDS];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rows.iter()
        .map(|r| {
            let noisy = perturb_record(&r.values, &domains, &budgets, &mut rng, ledger)?;
            let mut out = [0.0; SENSING_FIELDS];
            out.copy_from_slice(&noisy);
            Ok(out)
        })
        .collect()
}

/// Perturbs every sample of a single-field series at budget `eps`.
pub fn release_series(series: &[f64], domain: &BoundedDomain, eps: f64, seed: u64) -> Result<Vec<f64>> {
    let budget = PrivacyBudget::new(eps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    series.iter().map(|&x| sample(x, domain, budget, &mut rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReleaseMetrics {
    pub mia_auc: f64,
    pub privacy_strength: f64,
    pub pia: PropertyInference,
    pub utility: UtilityReport,
}

impl ReleaseMetrics {
    pub fn relative_utility(&self) -> f64 {
        match self.utility.clean_f1 {
            Some(c) if c > 0.0 => self.utility.f1 / c,
            _ => 0.0,
        }
    }
}

/// Attacks and evaluates one released batch against its clean counterpart.
///
/// The first half of the rows are members: the attacked model is a kernel
/// classifier fitted to their released features. The attacker queries it with
/// clean rows from both halves. Utility compares a classifier on released
/// features with one on clean features.
pub fn evaluate_release(clean: &[SensingRow], noisy: &[[f64; SENSING_FIELDS]], seed: u64) -> Result<ReleaseMetrics> {
    let n = clean.len();
    if noisy.len() != n || n < MIN_UTILITY_ROWS {
        return Err(invalid(format!(
            "release evaluation needs matching clean and noisy batches of at least {MIN_UTILITY_ROWS} rows"
        )));
    }
    let half = n / 2;
    let labels: Vec<bool> = clean.iter().map(|r| r.label).collect();
    let clean_values: Vec<[f64; SENSING_FIELDS]> = clean.iter().map(|r| r.values).collect();
    let clean_x = normalized(&clean_values);
    let noisy_x = normalized(noisy);

    let model = KernelClassifier::fit(
        noisy_x.slice(ndarray::s![..half, ..]).to_owned(),
        &labels[..half],
        TARGET_BANDWIDTH,
    )?;
    let conf = model.confidence(&clean_x, &labels);
    let mia_auc = mia_attack(&conf[..half], &conf[half..])?;

    let property: Vec<bool> = clean.iter().map(|r| r.property).collect();
    let probs = model.predict_proba(&noisy_x);
    let pia = pia_attack(&probs, &noisy_x, &property, seed ^ 0x51A)?;

    let mut utility = utility_eval(&noisy_x, &labels, seed)?;
    utility.clean_f1 = Some(utility_eval(&clean_x, &labels, seed)?.f1);
    Ok(ReleaseMetrics {
        mia_auc,
        privacy_strength: privacy_strength(mia_auc),
        pia,
        utility,
    })
}

/// Rows per seed in the trade-off sweep.
pub const SWEEP_ROWS: u64 = 400;
/// Length of the reconstruction target, ten days at 15-minute resolution.
pub const SWEEP_SERIES_LEN: usize = 960;

/// Classical denoisers an attacker would try, weakest to strongest.
pub fn default_denoisers() -> [Denoiser; 3] {
    [
        Denoiser::MovingAverage { window: 9 },
        Denoiser::SavitzkyGolay { window: 15, degree: 2 },
        Denoiser::Wiener { window: 9 },
    ]
}

/// Seed-averaged attack and utility metrics at one budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub eps: f64,
    pub mia_auc: f64,
    pub pia_advantage: f64,
    pub f1: f64,
    pub clean_f1: f64,
    pub mae_moving_average: f64,
    pub mae_savitzky_golay: f64,
    pub mae_wiener: f64,
}

impl TradeoffPoint {
    pub const HEADER: [&'static str; 8] = [
        "eps",
        "mia_auc",
        "pia_advantage",
        "f1",
        "clean_f1",
        "mae_moving_average",
        "mae_savitzky_golay",
        "mae_wiener",
    ];
}

/// Sweeps the budget over `eps_values`, averaging every metric over `seeds`.
pub fn tradeoff_curve(eps_values: &[f64], seeds: std::ops::Range<u64>) -> Result<Vec<TradeoffPoint>> {
    let count = seeds.end.saturating_sub(seeds.start);
    if count == 0 {
        return Err(invalid("trade-off sweep needs at least one seed"));
    }
    let domain = sensing_domains()[0];
    eps_values
        .iter()
        .map(|&eps| {
            let mut acc = [0.0; 7];
            for seed in seeds.clone() {
                let rows = crate::tracegen::SensingSource::new(seed).rows(0, 0..SWEEP_ROWS);
                let noisy = release(&rows, eps, seed ^ 0x7E1E, &mut BudgetLedger::new())?;
                let m = evaluate_release(&rows, &noisy, seed)?;
                let series = crate::tracegen::diurnal_series(SWEEP_SERIES_LEN, seed);
                let released = release_series(&series, &domain, eps, seed ^ 0x5E71E5)?;
                let mut vals = vec![m.mia_auc, m.pia.advantage(), m.utility.f1, m.utility.clean_f1.unwrap_or(0.0)];
                for d in default_denoisers() {
                    vals.push(reconstruction_attack(&released, &series, &d)?);
                }
                for (a, v) in acc.iter_mut().zip(vals) {
                    *a += v;
                }
            }
            let k = count as f64;
            Ok(TradeoffPoint {
                eps,
                mia_auc: acc[0] / k,
                pia_advantage: acc[1] / k,
                f1: acc[2] / k,
                clean_f1: acc[3] / k,
                mae_moving_average: acc[4] / k,
                mae_savitzky_golay: acc[5] / k,
                mae_wiener: acc[6] / k,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feedback_rules() {
        let s = FeedbackState::default();
        assert_eq!(feedback_update(&s, 0.9, 0.9), s);
        let p = feedback_update(&s, 0.5, 0.9);
        assert!(p.alpha > s.alpha && p.beta == s.beta);
        let both = feedback_update(&s, 0.5, 0.5);
        assert!((both.alpha - 5.5).abs() < 1e-12 && (both.beta - 22.0).abs() < 1e-12);
        let capped = FeedbackState {
            alpha: 49.0,
            ..s
        };
        assert_eq!(feedback_update(&capped, 0.0, 1.0).alpha, 50.0);
    }

    #[test]
    fn strength_mapping() {
        assert_eq!(privacy_strength(0.5), 1.0);
        assert_eq!(privacy_strength(1.0), 0.0);
        assert_eq!(privacy_strength(0.0), 0.0);
        assert!((privacy_strength(0.6) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn separable_utility() {
        let x = Array2::from_shape_fn((300, 1), |(i, _)| i as f64 / 300.0);
        let y: Vec<bool> = (0..300).map(|i| i >= 150).collect();
        assert!(utility_eval(&x, &y, 1).unwrap().f1 >= 0.98);
        assert!(utility_eval(&x.slice(ndarray::s![..50, ..]).to_owned(), &y[..50], 1).is_err());
    }
}
