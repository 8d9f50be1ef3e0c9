//! Membership, property and reconstruction attacks on released data.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::models::{LogisticConfig, LogisticRegression};
use crate::error::{invalid, Result};
use crate::stats;

/// Confidence-threshold membership inference, scored as the AUC of
/// separating member from non-member confidences.
pub fn mia_attack(members: &[f64], non_members: &[f64]) -> Result<f64> {
    if members.is_empty() || non_members.is_empty() {
        return Err(invalid("membership attack needs members and non-members"));
    }
    Ok(stats::rank_auc(members, non_members))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyInference {
    pub accuracy: f64,
    pub prior: f64,
}

impl PropertyInference {
    /// Attack accuracy in excess of always guessing the majority class.
    pub fn advantage(&self) -> f64 {
        self.accuracy - self.prior
    }
}

/// Logistic attacker predicting a hidden per-row property from the target
/// model's probabilities and the public features. Trained on a seeded half of
/// the rows, evaluated on the other half.
pub fn pia_attack(
    probabilities: &[f64],
    public: &Array2<f64>,
    property: &[bool],
    seed: u64,
) -> Result<PropertyInference> {
    let n = property.len();
    if probabilities.len() != n || public.nrows() != n {
        return Err(invalid("property attack inputs must have one entry per row"));
    }
    if n < 4 || property.iter().all(|&p| p) || property.iter().all(|&p| !p) {
        return Err(invalid("property attack needs both classes present"));
    }
    let mut x = Array2::<f64>::zeros((n, public.ncols() + 1));
    for i in 0..n {
        x[[i, 0]] = probabilities[i];
        for j in 0..public.ncols() {
            x[[i, j + 1]] = public[[i, j]];
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, test) = idx.split_at(n / 2);
    let labels = |rows: &[usize]| rows.iter().map(|&i| property[i]).collect::<Vec<_>>();
    let model = LogisticRegression::fit(&x.select(Axis(0), train), &labels(train), &LogisticConfig::default())?;
    let truth = labels(test);
    let predicted = model.predict_proba(&x.select(Axis(0), test));
    let correct = predicted.iter().zip(&truth).filter(|(p, t)| (**p > 0.5) == **t).count();
    let positives = truth.iter().filter(|&&t| t).count();
    let majority = positives.max(truth.len() - positives);
    Ok(PropertyInference {
        accuracy: correct as f64 / truth.len() as f64,
        prior: majority as f64 / truth.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Denoiser {
    MovingAverage { window: usize },
    SavitzkyGolay { window: usize, degree: usize },
    Wiener { window: usize },
}

impl Denoiser {
    pub fn window(&self) -> usize {
        match *self {
            Denoiser::MovingAverage { window }
            | Denoiser::SavitzkyGolay { window, .. }
            | Denoiser::Wiener { window } => window,
        }
    }

    pub fn apply(&self, series: &[f64]) -> Result<Vec<f64>> {
        let w = self.window();
        if w == 0 || w > series.len() {
            return Err(invalid(format!(
                "window {w} must be between 1 and the series length {}",
                series.len()
            )));
        }
        match *self {
            Denoiser::MovingAverage { window } => Ok(moving_average(series, window)),
            Denoiser::SavitzkyGolay { window, degree } => {
                if degree >= window {
                    return Err(invalid("polynomial degree must be below the window length"));
                }
                Ok(savitzky_golay(series, window, degree))
            }
            Denoiser::Wiener { window } => Ok(wiener(series, window)),
        }
    }
}

/// Bounds of the length-`w` window centered on `i` (left-biased for even `w`),
/// shifted inward so it stays inside the series.
fn window_at(i: usize, w: usize, n: usize) -> (usize, usize) {
    let start = i.saturating_sub((w - 1) / 2).min(n - w);
    (start, start + w)
}

fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let half = (w - 1) / 2;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + (w - 1 - half) + 1).min(x.len());
            stats::mean(&x[lo..hi])
        })
        .collect()
}

/// Local least-squares polynomial fit evaluated at each point.
fn savitzky_golay(x: &[f64], w: usize, degree: usize) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let (lo, hi) = window_at(i, w, x.len());
            let center = i as f64;
            let scale = (w as f64 / 2.0).max(1.0);
            let k = degree + 1;
            // normal equations in the shifted, scaled abscissa t = (j - i) / scale
            let mut ata = vec![vec![0.0; k]; k];
            let mut aty = vec![0.0; k];
            for (j, &y) in x.iter().enumerate().take(hi).skip(lo) {
                let t = (j as f64 - center) / scale;
                let mut pows = vec![1.0; k];
                for p in 1..k {
                    pows[p] = pows[p - 1] * t;
                }
                for r in 0..k {
                    aty[r] += pows[r] * y;
                    for c in 0..k {
                        ata[r][c] += pows[r] * pows[c];
                    }
                }
            }
            solve(ata, aty)[0]
        })
        .collect()
}

/// Gaussian elimination with partial pivoting for a small dense system.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .expect("nonempty");
        a.swap(col, pivot);
        b.swap(col, pivot);
        let d = a[col][col];
        if d.abs() < 1e-300 {
            continue;
        }
        for row in col + 1..n {
            let f = a[row][col] / d;
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut out = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|c| a[row][c] * out[c]).sum();
        out[row] = if a[row][row].abs() < 1e-300 {
            0.0
        } else {
            (b[row] - tail) / a[row][row]
        };
    }
    out
}

/// Adaptive local-statistics filter: shrinks each sample toward its local
/// mean by the fraction of local variance attributed to noise. The noise
/// level is the average local variance.
fn wiener(x: &[f64], w: usize) -> Vec<f64> {
    let local: Vec<(f64, f64)> = (0..x.len())
        .map(|i| {
            let (lo, hi) = window_at(i, w, x.len());
            let win = &x[lo..hi];
            (stats::mean(win), stats::variance(win))
        })
        .collect();
    let noise = local.iter().map(|l| l.1).sum::<f64>() / local.len() as f64;
    x.iter()
        .zip(&local)
        .map(|(&v, &(m, var))| {
            if var <= noise || var == 0.0 {
                m
            } else {
                m + (1.0 - noise / var) * (v - m)
            }
        })
        .collect()
}

/// Mean absolute error between the denoised release and the original series.
pub fn reconstruction_attack(noisy: &[f64], original: &[f64], denoiser: &Denoiser) -> Result<f64> {
    if noisy.len() != original.len() {
        return Err(invalid("noisy and original series differ in length"));
    }
    let recovered = denoiser.apply(noisy)?;
    Ok(recovered
        .iter()
        .zip(original)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / original.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_one_is_identity() {
        let x = [1.0, 5.0, 2.0];
        assert_eq!(
            reconstruction_attack(&x, &x, &Denoiser::MovingAverage { window: 1 }).unwrap(),
            0.0
        );
        assert!(Denoiser::MovingAverage { window: 4 }.apply(&x).is_err());
    }

    #[test]
    fn savitzky_golay_reproduces_cubic() {
        let x: Vec<f64> = (0..60).map(|i| {
            let t = i as f64 * 0.1;
            0.5 * t * t * t - 2.0 * t * t + t - 3.0
        }).collect();
        let mae = reconstruction_attack(&x, &x, &Denoiser::SavitzkyGolay { window: 9, degree: 3 }).unwrap();
        assert!(mae < 1e-9, "{mae}");
        assert!(Denoiser::SavitzkyGolay { window: 3, degree: 3 }.apply(&x).is_err());
    }

    #[test]
    fn wiener_flattens_pure_noise_and_keeps_constants() {
        assert_eq!(wiener(&[2.0; 10], 3), vec![2.0; 10]);
        let alternating: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let out = wiener(&alternating, 5);
        assert!(out.iter().all(|v| v.abs() < 0.5));
    }

    #[test]
    fn pia_detects_leaked_property() {
        let n = 400;
        let public = Array2::from_shape_fn((n, 1), |(i, _)| (i % 10) as f64);
        let property: Vec<bool> = (0..n).map(|i| i % 10 >= 6).collect();
        let probs = vec![0.5; n];
        let r = pia_attack(&probs, &public, &property, 3).unwrap();
        assert!(r.accuracy > 0.95, "{r:?}");
        assert!(pia_attack(&probs, &public, &vec![true; n], 3).is_err());
    }
}
