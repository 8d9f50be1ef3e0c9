//! Distilled descendant blocks and their (memory, latency, accuracy-loss) profiles.

use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{shuffled_batches, Autoencoder, Detector, LabeledRows, Standardizer, TeacherConfig};
use crate::codec::{Reader, Writer};
use crate::error::{invalid, Error, Result};
use crate::nn::{mse_loss, Activation, Adam, Dense, Mlp};
use crate::stats;

const LIBRARY_MAGIC: &[u8; 4] = b"LAEL";
const LIBRARY_VERSION: u32 = 1;

/// Minimum number of timed passes behind each latency median.
pub const MIN_TIMING_PASSES: usize = 101;
const TIMING_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VariantProfile {
    pub memory_bytes: f64,
    pub latency_us: f64,
    /// F1 points lost when only this variant replaces its teacher block.
    pub accuracy_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub parent: usize,
    pub index: usize,
    /// Parameter fraction relative to the teacher block; 1.0 for the teacher.
    pub fraction: f64,
    pub net: Mlp,
    pub profile: Option<VariantProfile>,
}

/// Per-block variant lists; variant 0 of every block is the teacher block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLibrary {
    pub standardizer: Standardizer,
    pub blocks: Vec<Vec<Variant>>,
}

impl BlockLibrary {
    pub fn from_teacher(teacher: &Autoencoder) -> Self {
        let blocks = teacher
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                vec![Variant {
                    parent: i,
                    index: 0,
                    fraction: 1.0,
                    net: b.clone(),
                    profile: None,
                }]
            })
            .collect();
        Self {
            standardizer: teacher.standardizer.clone(),
            blocks,
        }
    }

    pub fn teacher(&self) -> Autoencoder {
        self.assemble(&vec![0; self.blocks.len()]).expect("teacher variants always exist")
    }

    pub fn assemble(&self, choices: &[usize]) -> Result<Autoencoder> {
        if choices.len() != self.blocks.len() {
            return Err(Error::DimensionMismatch {
                expected: self.blocks.len(),
                actual: choices.len(),
            });
        }
        let blocks = choices
            .iter()
            .zip(&self.blocks)
            .map(|(&j, vs)| {
                vs.get(j)
                    .map(|v| v.net.clone())
                    .ok_or_else(|| invalid(format!("variant {j} does not exist")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Autoencoder {
            standardizer: self.standardizer.clone(),
            blocks,
        })
    }

    /// Profile table indexed `[block][variant]`; errors if profiling has not run.
    pub fn profiles(&self) -> Result<Vec<Vec<VariantProfile>>> {
        self.blocks
            .iter()
            .map(|vs| {
                vs.iter()
                    .map(|v| v.profile.ok_or_else(|| invalid("library has not been profiled")))
                    .collect()
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(LIBRARY_MAGIC, LIBRARY_VERSION);
        Autoencoder {
            standardizer: self.standardizer.clone(),
            blocks: Vec::new(),
        }
        .write_to(&mut w);
        w.u32(self.blocks.len() as u32);
        for vs in &self.blocks {
            w.u32(vs.len() as u32);
            for v in vs {
                w.f64(v.fraction);
                v.net.write_to(&mut w);
                match v.profile {
                    Some(p) => {
                        w.u32(1);
                        w.f64(p.memory_bytes);
                        w.f64(p.latency_us);
                        w.f64(p.accuracy_loss);
                    }
                    None => w.u32(0),
                }
            }
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::with_header(bytes, LIBRARY_MAGIC, LIBRARY_VERSION)?;
        let standardizer = Autoencoder::read_from(&mut r)?.standardizer;
        let nblocks = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(nblocks);
        for parent in 0..nblocks {
            let nvar = r.u32()? as usize;
            let mut vs = Vec::with_capacity(nvar);
            for index in 0..nvar {
                let fraction = r.f64()?;
                let net = Mlp::read_from(&mut r)?;
                let profile = match r.u32()? {
                    0 => None,
                    _ => Some(VariantProfile {
                        memory_bytes: r.f64()?,
                        latency_us: r.f64()?,
                        accuracy_loss: r.f64()?,
                    }),
                };
                vs.push(Variant {
                    parent,
                    index,
                    fraction,
                    net,
                    profile,
                });
            }
            if vs.is_empty() {
                return Err(Error::Format(format!("block {parent} has no variants")));
            }
            blocks.push(vs);
        }
        r.finish()?;
        Ok(Self {
            standardizer,
            blocks,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::codec::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Teacher block inputs and outputs on the given standardized rows.
fn block_activations(teacher: &Autoencoder, z: &Array2<f32>) -> Vec<Array2<f32>> {
    let mut acts = vec![z.clone()];
    for b in &teacher.blocks {
        let next = b.forward(acts.last().expect("nonempty"));
        acts.push(next);
    }
    acts
}

/// Largest rank whose factorized parameter count stays within `fraction` of
/// the parent's, and at least 1.
pub fn descendant_rank(inputs: usize, outputs: usize, fraction: f64) -> usize {
    let parent = (inputs * outputs + outputs) as f64;
    let k = ((fraction * parent - outputs as f64) / (inputs + outputs) as f64).floor();
    if k.is_finite() && k >= 1.0 {
        k as usize
    } else {
        1
    }
}

/// Randomized range finder: `W ≈ Q·(Qᵀ·W)` with `Q` orthonormal, `k` columns.
fn low_rank_init(weight: &Array2<f32>, k: usize, rng: &mut ChaCha8Rng) -> (Array2<f32>, Array2<f32>) {
    let w = weight.mapv(f64::from);
    let omega = Array2::from_shape_fn((w.ncols(), k), |_| rng.random_range(-1.0..1.0));
    let mut y = w.dot(&omega);
    for _ in 0..2 {
        y = w.dot(&w.t().dot(&y));
        orthonormalize(&mut y);
    }
    orthonormalize(&mut y);
    let tail = y.t().dot(&w);
    (y.mapv(|v| v as f32), tail.mapv(|v| v as f32))
}

/// Modified Gram-Schmidt on the columns; degenerate columns become zero.
fn orthonormalize(m: &mut Array2<f64>) {
    for j in 0..m.ncols() {
        for p in 0..j {
            let proj = m.column(p).dot(&m.column(j));
            let prev = m.column(p).to_owned();
            m.column_mut(j).scaled_add(-proj, &prev);
        }
        let norm = m.column(j).dot(&m.column(j)).sqrt();
        if norm > 1e-10 {
            m.column_mut(j).mapv_inplace(|v| v / norm);
        } else {
            m.column_mut(j).fill(0.0);
        }
    }
}

fn build_descendant(parent: &Mlp, fraction: f64, rng: &mut ChaCha8Rng) -> Mlp {
    if fraction >= 1.0 {
        return parent.clone();
    }
    let layer = &parent.layers[0];
    let k = descendant_rank(layer.inputs(), layer.outputs(), fraction);
    let (down, up) = low_rank_init(&layer.weight, k, rng);
    let mut first = Dense::new(layer.inputs(), k, Activation::Identity, false, rng);
    first.weight = down;
    let mut second = Dense::new(k, layer.outputs(), layer.activation, true, rng);
    second.weight = up;
    second.bias = layer.bias.clone();
    Mlp::new(vec![first, second])
}

fn distill(student: &mut Mlp, inputs: &Array2<f32>, targets: &Array2<f32>, cfg: &TeacherConfig, rng: &mut ChaCha8Rng) -> bool {
    let mut opt = Adam::new(student, cfg.kd_lr);
    for _ in 0..cfg.kd_epochs {
        for idx in shuffled_batches(inputs.nrows(), cfg.batch_size, rng) {
            let x = inputs.select(Axis(0), &idx);
            let y = targets.select(Axis(0), &idx);
            let trace = student.forward_trace(&x);
            let (loss, grad) = mse_loss(trace.output(), &y);
            if !loss.is_finite() {
                return false;
            }
            let (grads, _) = student.backward(&trace, &grad);
            opt.apply(student, &grads);
        }
    }
    student.is_finite()
}

/// Builds a library holding the teacher blocks plus one low-rank descendant
/// per block and fraction, each distilled against the teacher block's output
/// on real activations.
pub fn distill_descendants(
    teacher: &Autoencoder,
    train: &Array2<f64>,
    fractions: &[f64],
    cfg: &TeacherConfig,
    seed: u64,
) -> Result<BlockLibrary> {
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(invalid(format!("width fraction {f} outside (0, 1]")));
    }
    let z = teacher.standardizer.transform(train)?;
    let acts = block_activations(teacher, &z);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut library = BlockLibrary::from_teacher(teacher);
    for (i, parent) in teacher.blocks.iter().enumerate() {
        for &fraction in fractions {
            let mut student = build_descendant(parent, fraction, &mut rng);
            if !distill(&mut student, &acts[i], &acts[i + 1], cfg, &mut rng) {
                log::warn!("descendant of block {i} at fraction {fraction} diverged; dropped");
                continue;
            }
            let index = library.blocks[i].len();
            library.blocks[i].push(Variant {
                parent: i,
                index,
                fraction,
                net: student,
                profile: None,
            });
        }
    }
    Ok(library)
}

/// Median forward-pass time of every net, in microseconds. Passes are
/// interleaved round-robin so slow drift in machine load hits all nets alike.
fn time_forwards(nets: &[(&Mlp, &Array2<f32>)], passes: usize) -> Vec<f64> {
    for (net, batch) in nets {
        for _ in 0..3 {
            std::hint::black_box(net.forward(batch));
        }
    }
    let mut samples = vec![Vec::with_capacity(passes); nets.len()];
    for _ in 0..passes {
        for ((net, batch), out) in nets.iter().zip(&mut samples) {
            let start = Instant::now();
            std::hint::black_box(net.forward(std::hint::black_box(batch)));
            out.push(start.elapsed().as_secs_f64() * 1e6);
        }
    }
    samples
        .into_iter()
        .map(|mut xs| {
            xs.sort_by(f64::total_cmp);
            stats::quantile_sorted(&xs, 0.5)
        })
        .collect()
}

/// Fills every variant's profile.
///
/// Memory is parameter bytes at 32-bit precision. Latency is the median of
/// `passes` timed forward passes of the block alone on a fixed batch. Accuracy
/// loss is the drop in calibration-set F1 (in points, floored at 0) when only
/// that variant replaces its teacher block, with the anomaly threshold
/// recalibrated on clean validation rows for each configuration.
pub fn profile_blocks(
    library: &mut BlockLibrary,
    validation: &Array2<f64>,
    calibration: &LabeledRows,
    passes: usize,
) -> Result<()> {
    let passes = passes.max(MIN_TIMING_PASSES);
    let teacher = library.teacher();
    let baseline = Detector::fit(teacher.clone(), validation)?.f1(calibration)?;
    let z = teacher.standardizer.transform(validation)?;
    let rows = z.nrows().min(TIMING_BATCH);
    let batch_rows = z.slice(s![..rows, ..]).to_owned();
    let acts = block_activations(&teacher, &batch_rows);
    let nblocks = library.blocks.len();
    let nets: Vec<(&Mlp, &Array2<f32>)> = library
        .blocks
        .iter()
        .zip(&acts)
        .flat_map(|(variants, batch)| variants.iter().map(move |v| (&v.net, batch)))
        .collect();
    let mut latencies = time_forwards(&nets, passes).into_iter();
    for i in 0..nblocks {
        for j in 0..library.blocks[i].len() {
            let net = &library.blocks[i][j].net;
            let memory_bytes = (net.param_count() * 4) as f64;
            let latency_us = latencies.next().expect("one timing per variant");
            let accuracy_loss = if j == 0 {
                0.0
            } else {
                let mut choices = vec![0; nblocks];
                choices[i] = j;
                let f1 = Detector::fit(library.assemble(&choices)?, validation)?.f1(calibration)?;
                ((baseline - f1) * 100.0).max(0.0)
            };
            library.blocks[i][j].profile = Some(VariantProfile {
                memory_bytes,
                latency_us,
                accuracy_loss,
            });
        }
    }
    Ok(())
}
