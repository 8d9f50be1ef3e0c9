//! Small classifiers used by the edge: a logistic regression trained by
//! full-batch gradient descent and a Gaussian-kernel vote classifier.

use ndarray::{Array1, Array2, Axis};

use crate::error::{invalid, Result};

/// Binary logistic regression on standardized inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticRegression {
    mean: Array1<f64>,
    scale: Array1<f64>,
    weights: Array1<f64>,
    bias: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.5,
            l2: 1e-4,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticRegression {
    pub fn fit(x: &Array2<f64>, y: &[bool], cfg: &LogisticConfig) -> Result<Self> {
        if x.nrows() != y.len() || x.nrows() == 0 {
            return Err(invalid("logistic fit needs one label per nonempty row"));
        }
        let n = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).expect("nonempty");
        let scale = x.var_axis(Axis(0), 0.0).mapv(|v| if v > 1e-24 { v.sqrt() } else { 1.0 });
        let z = (x - &mean) / &scale;
        let target = Array1::from_iter(y.iter().map(|&b| f64::from(u8::from(b))));
        let mut weights = Array1::<f64>::zeros(x.ncols());
        let mut bias = 0.0;
        for _ in 0..cfg.epochs {
            let logits = z.dot(&weights) + bias;
            let err = logits.mapv(sigmoid) - &target;
            let grad_w = z.t().dot(&err) / n + &weights * cfg.l2;
            let grad_b = err.sum() / n;
            weights.scaled_add(-cfg.learning_rate, &grad_w);
            bias -= cfg.learning_rate * grad_b;
        }
        Ok(Self {
            mean,
            scale,
            weights,
            bias,
        })
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Vec<f64> {
        let z = (x - &self.mean) / &self.scale;
        (z.dot(&self.weights) + self.bias).mapv(sigmoid).to_vec()
    }
}

/// Nadaraya-Watson vote with a Gaussian kernel, shrunk toward the training
/// prevalence. A small bandwidth lets it memorize individual training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelClassifier {
    points: Array2<f64>,
    labels: Vec<f64>,
    bandwidth: f64,
    prior: f64,
    prior_weight: f64,
}

impl KernelClassifier {
    pub fn fit(points: Array2<f64>, labels: &[bool], bandwidth: f64) -> Result<Self> {
        if points.nrows() != labels.len() || labels.is_empty() {
            return Err(invalid("kernel classifier needs one label per nonempty row"));
        }
        if !(bandwidth > 0.0) {
            return Err(invalid("bandwidth must be positive"));
        }
        let labels: Vec<f64> = labels.iter().map(|&b| f64::from(u8::from(b))).collect();
        let prior = labels.iter().sum::<f64>() / labels.len() as f64;
        Ok(Self {
            points,
            labels,
            bandwidth,
            prior,
            prior_weight: 0.1,
        })
    }

    /// Probability of the positive class for each query row.
    pub fn predict_proba(&self, queries: &Array2<f64>) -> Vec<f64> {
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        queries
            .outer_iter()
            .map(|q| {
                let (mut num, mut den) = (self.prior_weight * self.prior, self.prior_weight);
                for (p, &y) in self.points.outer_iter().zip(&self.labels) {
                    let d2: f64 = p.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                    let k = (-d2 * inv).exp();
                    num += k * y;
                    den += k;
                }
                num / den
            })
            .collect()
    }

    /// Probability the model assigns to each row's own label.
    pub fn confidence(&self, queries: &Array2<f64>, labels: &[bool]) -> Vec<f64> {
        self.predict_proba(queries)
            .into_iter()
            .zip(labels)
            .map(|(p, &y)| if y { p } else { 1.0 - p })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_separates_threshold_labels() {
        let x = Array2::from_shape_fn((200, 2), |(i, j)| if j == 0 { i as f64 } else { (i % 7) as f64 });
        let y: Vec<bool> = (0..200).map(|i| i >= 100).collect();
        let m = LogisticRegression::fit(&x, &y, &LogisticConfig::default()).unwrap();
        let p = m.predict_proba(&x);
        let correct = p.iter().zip(&y).filter(|(p, y)| (**p > 0.5) == **y).count();
        assert!(correct >= 195, "{correct}");
    }

    #[test]
    fn kernel_memorizes_training_rows() {
        let x = Array2::from_shape_fn((50, 1), |(i, _)| i as f64);
        let y: Vec<bool> = (0..50).map(|i| i % 2 == 0).collect();
        let m = KernelClassifier::fit(x.clone(), &y, 0.1).unwrap();
        assert!(m.confidence(&x, &y).iter().all(|&c| c > 0.9));
        assert!(KernelClassifier::fit(x, &y, 0.0).is_err());
    }
}
