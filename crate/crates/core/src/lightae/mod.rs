//! Block-scalable autoencoder for channel anomaly detection.
//!
//! The teacher is a stack of fully connected blocks trained to reconstruct
//! standardized channel features. Each block can be swapped for a distilled
//! low-rank descendant; [`select`] picks the combination with the smallest
//! predicted accuracy loss under latency and memory budgets.

mod library;
mod select;

use std::path::Path;
use std::sync::{Arc, RwLock};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{invalid, Error, Result};
use crate::nn::{mse_loss, Activation, Adam, Mlp};
use crate::stats;
use crate::tracegen::{build_dataset, Profile, Trace};

pub use library::{distill_descendants, profile_blocks, BlockLibrary, Variant, VariantProfile};
pub use select::{
    brute_force_select, select_blocks, select_from_profiles, Constraints, SelectionPlan,
    EXHAUSTIVE_LIMIT,
};

const MODEL_MAGIC: &[u8; 4] = b"LAEM";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub ae_lr: f32,
    pub kd_lr: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub kd_epochs: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            input_dim: 3,
            hidden_sizes: vec![360, 180, 90, 45],
            ae_lr: 1e-3,
            kd_lr: 5e-4,
            batch_size: 256,
            epochs: 200,
            kd_epochs: 50,
        }
    }
}

impl TeacherConfig {
    pub fn latent_dim(&self) -> usize {
        self.hidden_sizes.last().copied().unwrap_or(self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(invalid("layer widths must be positive and at least one hidden width given"));
        }
        if self.batch_size == 0 || !(self.ae_lr > 0.0) || !(self.kd_lr > 0.0) {
            return Err(invalid("batch size and learning rates must be positive"));
        }
        Ok(())
    }

    /// Encoder widths followed by their mirror image.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden_sizes);
        w.extend(self.hidden_sizes.iter().rev().skip(1));
        w.push(self.input_dim);
        w
    }
}

/// Per-feature z-score moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &Array2<f64>) -> Self {
        let n = rows.nrows().max(1) as f64;
        let mean: Vec<f64> = rows.axis_iter(Axis(1)).map(|c| c.sum() / n).collect();
        let scale = rows
            .axis_iter(Axis(1))
            .zip(&mean)
            .map(|(c, m)| {
                let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn transform(&self, rows: &Array2<f64>) -> Result<Array2<f32>> {
        if rows.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                actual: rows.ncols(),
            });
        }
        let mut out = Array2::<f32>::zeros(rows.raw_dim());
        for ((i, j), v) in rows.indexed_iter() {
            out[[i, j]] = ((v - self.mean[j]) / self.scale[j]) as f32;
        }
        Ok(out)
    }
}

/// Standardizer plus a chain of blocks; the teacher and every assembled plan
/// share this representation.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub standardizer: Standardizer,
    pub blocks: Vec<Mlp>,
}

impl Autoencoder {
    pub fn input_dim(&self) -> usize {
        self.standardizer.mean.len()
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(Mlp::param_count).sum()
    }

    pub fn macs(&self) -> usize {
        self.blocks.iter().map(Mlp::macs).sum()
    }

    pub fn reconstruct(&self, z: &Array2<f32>) -> Array2<f32> {
        let mut h = z.clone();
        for block in &self.blocks {
            h = block.forward(&h);
        }
        h
    }

    /// Per-row mean squared reconstruction error in standardized units.
    pub fn scores(&self, rows: &Array2<f64>) -> Result<Vec<f64>> {
        let z = self.standardizer.transform(rows)?;
        let recon = self.reconstruct(&z);
        Ok(z.outer_iter()
            .zip(recon.outer_iter())
            .map(|(a, b)| {
                let sq: f64 = a.iter().zip(b).map(|(x, y)| f64::from(x - y).powi(2)).sum();
                sq / a.len().max(1) as f64
            })
            .collect())
    }

    /// Anomaly score of a window: mean squared reconstruction error over all of its rows.
    pub fn anomaly_score(&self, window: &Array2<f64>) -> Result<f64> {
        if window.nrows() == 0 {
            return Err(invalid("empty window"));
        }
        Ok(stats::mean(&self.scores(window)?))
    }

    pub fn write_to(&self, w: &mut Writer) {
        w.u32(self.input_dim() as u32);
        for (m, s) in self.standardizer.mean.iter().zip(&self.standardizer.scale) {
            w.f64(*m);
            w.f64(*s);
        }
        w.u32(self.blocks.len() as u32);
        for block in &self.blocks {
            block.write_to(w);
        }
    }

    pub fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        let dim = r.u32()? as usize;
        let mut mean = Vec::with_capacity(dim);
        let mut scale = Vec::with_capacity(dim);
        for _ in 0..dim {
            mean.push(r.f64()?);
            scale.push(r.f64()?);
        }
        let n = r.u32()? as usize;
        let blocks = (0..n).map(|_| Mlp::read_from(r)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            standardizer: Standardizer { mean, scale },
            blocks,
        })
    }
}

/// Teacher training output.
#[derive(Debug, Clone)]
pub struct TrainedTeacher {
    pub model: Autoencoder,
    pub epoch_losses: Vec<f32>,
}

pub(crate) fn shuffled_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Trains the teacher on clean rows (raw units). Deterministic given `seed`.
pub fn train_teacher(rows: &Array2<f64>, cfg: &TeacherConfig, seed: u64) -> Result<TrainedTeacher> {
    cfg.validate()?;
    if rows.ncols() != cfg.input_dim {
        return Err(Error::DimensionMismatch {
            expected: cfg.input_dim,
            actual: rows.ncols(),
        });
    }
    if rows.nrows() < cfg.batch_size {
        return Err(invalid(format!(
            "need at least {} training rows, got {}",
            cfg.batch_size,
            rows.nrows()
        )));
    }
    let standardizer = Standardizer::fit(rows);
    let z = standardizer.transform(rows)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::with_widths(&cfg.widths(), Activation::Relu, Activation::Identity, &mut rng);
    let mut opt = Adam::new(&net, cfg.ae_lr);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0f64;
        let batches = shuffled_batches(z.nrows(), cfg.batch_size, &mut rng);
        for idx in &batches {
            let x = z.select(Axis(0), idx);
            let trace = net.forward_trace(&x);
            let (loss, grad) = mse_loss(trace.output(), &x);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step: epoch,
                    what: "teacher reconstruction loss".into(),
                });
            }
            let (grads, _) = net.backward(&trace, &grad);
            opt.apply(&mut net, &grads);
            total += f64::from(loss) * idx.len() as f64;
        }
        let mean = (total / z.nrows() as f64) as f32;
        log::debug!("teacher epoch {epoch}: loss {mean:.6}");
        epoch_losses.push(mean);
    }
    let blocks = net.layers.into_iter().map(|l| Mlp::new(vec![l])).collect();
    Ok(TrainedTeacher {
        model: Autoencoder {
            standardizer,
            blocks,
        },
        epoch_losses,
    })
}

/// Threshold and score-to-risk mapping fitted on clean validation scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub median: f64,
    pub upper: f64,
}

pub const MIN_CALIBRATION_SCORES: usize = 100;

pub fn calibrate(clean_scores: &[f64]) -> Result<Calibration> {
    if clean_scores.len() < MIN_CALIBRATION_SCORES {
        return Err(invalid(format!(
            "calibration needs at least {MIN_CALIBRATION_SCORES} scores, got {}",
            clean_scores.len()
        )));
    }
    if clean_scores.iter().any(|s| !s.is_finite()) {
        return Err(invalid("non-finite calibration score"));
    }
    let mut sorted = clean_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Calibration {
        threshold: stats::quantile_sorted(&sorted, 0.99),
        median: stats::quantile_sorted(&sorted, 0.5),
        upper: stats::quantile_sorted(&sorted, 0.999),
    })
}

impl Calibration {
    pub fn is_anomalous(&self, score: f64) -> bool {
        score > self.threshold
    }

    /// Linear map from the clean median (risk 0) to the 99.9th percentile (risk 1).
    pub fn risk(&self, score: f64) -> f64 {
        let span = self.upper - self.median;
        if span <= 0.0 {
            return if score > self.median { 1.0 } else { 0.0 };
        }
        ((score - self.median) / span).clamp(0.0, 1.0)
    }
}

/// Deployable detector: model plus calibration, serialized together.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub model: Autoencoder,
    pub calibration: Calibration,
}

impl Detector {
    pub fn fit(model: Autoencoder, clean_validation: &Array2<f64>) -> Result<Self> {
        let calibration = calibrate(&model.scores(clean_validation)?)?;
        Ok(Self { model, calibration })
    }

    pub fn channel_risk(&self, window: &Array2<f64>) -> Result<f64> {
        Ok(self.calibration.risk(self.model.anomaly_score(window)?))
    }

    pub fn predict(&self, rows: &Array2<f64>) -> Result<Vec<bool>> {
        Ok(self
            .model
            .scores(rows)?
            .into_iter()
            .map(|s| self.calibration.is_anomalous(s))
            .collect())
    }

    pub fn f1(&self, set: &LabeledRows) -> Result<f64> {
        Ok(stats::f1_score(&self.predict(&set.rows)?, &set.anomalous))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(MODEL_MAGIC, MODEL_VERSION);
        self.model.write_to(&mut w);
        w.f64(self.calibration.threshold);
        w.f64(self.calibration.median);
        w.f64(self.calibration.upper);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::with_header(bytes, MODEL_MAGIC, MODEL_VERSION)?;
        let model = Autoencoder::read_from(&mut r)?;
        let calibration = Calibration {
            threshold: r.f64()?,
            median: r.f64()?,
            upper: r.f64()?,
        };
        r.finish()?;
        Ok(Self { model, calibration })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::codec::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Shared, atomically swappable detector for the scoring path.
#[derive(Debug)]
pub struct PlanHandle {
    current: RwLock<Arc<Detector>>,
}

impl PlanHandle {
    pub fn new(detector: Detector) -> Self {
        Self {
            current: RwLock::new(Arc::new(detector)),
        }
    }

    pub fn load(&self) -> Arc<Detector> {
        Arc::clone(&self.current.read().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn swap(&self, detector: Detector) -> Arc<Detector> {
        let mut guard = self.current.write().unwrap_or_else(|e| e.into_inner());
        std::mem::replace(&mut *guard, Arc::new(detector))
    }
}

/// Feature rows with per-row anomaly ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRows {
    pub rows: Array2<f64>,
    pub anomalous: Vec<bool>,
}

impl LabeledRows {
    pub fn from_trace(trace: &Trace) -> Self {
        Self {
            rows: trace_rows(trace),
            anomalous: trace.anomaly_flags(),
        }
    }
}

pub fn trace_rows(trace: &Trace) -> Array2<f64> {
    let feats = trace.features();
    Array2::from_shape_fn((feats.len(), 3), |(i, j)| feats[i][j])
}

/// Train/validation/calibration/test partitions for one channel profile.
///
/// The clean training trace is split 85/15 into fit and validation rows.
/// Calibration is an independently seeded labeled trace used for profiling
/// accuracy loss, so the reported test F1 never sees it.
#[derive(Debug, Clone)]
pub struct ChannelSplits {
    pub train: Array2<f64>,
    pub validation: Array2<f64>,
    pub calibration: LabeledRows,
    pub test: LabeledRows,
}

pub fn channel_splits(profile: Profile, seed: u64) -> Result<ChannelSplits> {
    let (train, test) = build_dataset(profile, seed)?;
    let (_, calibration) = build_dataset(profile, seed ^ 0xCA11_B4A7)?;
    let rows = trace_rows(&train);
    let cut = rows.nrows() * 85 / 100;
    Ok(ChannelSplits {
        train: rows.slice(ndarray::s![..cut, ..]).to_owned(),
        validation: rows.slice(ndarray::s![cut.., ..]).to_owned(),
        calibration: LabeledRows::from_trace(&calibration),
        test: LabeledRows::from_trace(&test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> TeacherConfig {
        TeacherConfig {
            hidden_sizes: vec![16, 8, 4],
            batch_size: 32,
            epochs: 30,
            ..TeacherConfig::default()
        }
    }

    #[test]
    fn widths_mirror_encoder() {
        assert_eq!(
            TeacherConfig::default().widths(),
            vec![3, 360, 180, 90, 45, 90, 180, 360, 3]
        );
        assert_eq!(TeacherConfig::default().latent_dim(), 45);
    }

    #[test]
    fn constant_data_reconstructs() {
        let rows = Array2::from_elem((256, 3), 4.0);
        let cfg = TeacherConfig {
            epochs: 60,
            ..small_cfg()
        };
        let t = train_teacher(&rows, &cfg, 1).unwrap();
        let mse = t.model.anomaly_score(&rows).unwrap();
        assert!(mse < 1e-4, "{mse}");
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let rows = Array2::from_shape_fn((64, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let a = train_teacher(&rows, &small_cfg(), 9).unwrap();
        let b = train_teacher(&rows, &small_cfg(), 9).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn score_rejects_wrong_width() {
        let rows = Array2::from_shape_fn((64, 3), |(i, j)| (i + j) as f64);
        let t = train_teacher(&rows, &small_cfg(), 1).unwrap();
        assert!(matches!(
            t.model.scores(&Array2::zeros((2, 4))),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn calibration_mapping() {
        let scores: Vec<f64> = (0..1000).map(f64::from).collect();
        let c = calibrate(&scores).unwrap();
        assert_eq!(c.risk(c.median), 0.0);
        assert_eq!(c.risk(c.median - 5.0), 0.0);
        assert_eq!(c.risk(c.upper), 1.0);
        assert_eq!(c.risk(c.upper + 1.0), 1.0);
        assert!((c.risk(0.5 * (c.median + c.upper)) - 0.5).abs() < 1e-12);
        assert!(calibrate(&scores[..99]).is_err());
    }

    #[test]
    fn detector_round_trips() {
        let rows = Array2::from_shape_fn((128, 3), |(i, j)| ((i * 5 + j) % 13) as f64);
        let t = train_teacher(&rows, &small_cfg(), 3).unwrap();
        let d = Detector::fit(t.model, &rows).unwrap();
        let back = Detector::from_bytes(&d.to_bytes()).unwrap();
        assert_eq!(back, d);
        let mut bytes = d.to_bytes();
        bytes[0] = b'X';
        assert!(Detector::from_bytes(&bytes).is_err());
    }
}
