//! Dense layers, multilayer perceptrons with explicit backprop, and Adam.
//!
//! Parameters are `f32` so they serialize bit-for-bit into model files.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: &mut Array2<f32>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => x.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => x.mapv_inplace(f32::tanh),
        }
    }

    #[inline]
    fn eval(self, v: f32) -> f32 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Multiplies `grad` in place by the derivative, expressed through the output.
    fn backprop(self, grad: &mut Array2<f32>, output: &Array2<f32>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => grad.zip_mut_with(output, |g, &o| {
                if o <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => grad.zip_mut_with(output, |g, &o| *g *= 1.0 - o * o),
        }
    }

    fn code(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Tanh),
            other => Err(Error::Format(format!("unknown activation code {other}"))),
        }
    }
}

// Below this output width with wide inputs, gemm's operand packing costs more
// than the product itself, so rows are dotted against weight columns directly.
const NARROW_OUTPUTS: usize = 4;
const NARROW_MIN_INPUTS: usize = 128;

fn narrow_dot(x: &Array2<f32>, weight: &Array2<f32>) -> Array2<f32> {
    let columns: Vec<Vec<f32>> = weight.columns().into_iter().map(|c| c.to_vec()).collect();
    let mut y = Array2::zeros((x.nrows(), weight.ncols()));
    for (row, mut out) in x.rows().into_iter().zip(y.rows_mut()) {
        let row = row.to_vec();
        for (col, v) in columns.iter().zip(out.iter_mut()) {
            *v = lane_dot(&row, col);
        }
    }
    y
}

/// Dot product with eight independent accumulators so it vectorizes.
fn lane_dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(p, q)| p * q).sum();
    for (p, q) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += p[k] * q[k];
        }
    }
    acc.iter().sum::<f32>() + tail
}

/// Fully connected layer `act(x·W + b)` with `W` stored as `(inputs, outputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f32>,
    pub bias: Option<Array1<f32>>,
    pub activation: Activation,
}

impl Dense {
    /// Uniform `±1/sqrt(fan_in)` initialization.
    pub fn new<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (inputs as f32).sqrt();
        let weight = Array2::from_shape_fn((inputs, outputs), |_| rng.random_range(-bound..bound));
        let bias = with_bias.then(|| Array1::from_shape_fn(outputs, |_| rng.random_range(-bound..bound)));
        Self {
            weight,
            bias,
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Array1::len)
    }

    pub fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        let mut y = if self.outputs() <= NARROW_OUTPUTS && self.inputs() >= NARROW_MIN_INPUTS {
            narrow_dot(x, &self.weight)
        } else {
            x.dot(&self.weight)
        };
        match &self.bias {
            // One pass over the output instead of separate bias and activation sweeps.
            Some(b) => {
                let act = self.activation;
                for mut row in y.rows_mut() {
                    row.zip_mut_with(b, |v, &bias| *v = act.eval(*v + bias));
                }
            }
            None => self.activation.apply(&mut y),
        }
        y
    }

    /// Multiply-accumulate operations for one input row.
    pub fn macs(&self) -> usize {
        self.weight.len()
    }
}

#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub weight: Array2<f32>,
    pub bias: Option<Array1<f32>>,
}

#[derive(Debug, Clone)]
pub struct Grads {
    pub layers: Vec<LayerGrad>,
}

impl Grads {
    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|g| {
            g.weight.iter().all(|v| v.is_finite())
                && g.bias.as_ref().is_none_or(|b| b.iter().all(|v| v.is_finite()))
        })
    }
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
    pub activations: Vec<Array2<f32>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f32> {
        self.activations.last().expect("trace holds the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(layers: Vec<Dense>) -> Self {
        Self { layers }
    }

    /// Builds `widths[0] -> widths[1] -> ...` with `hidden` between layers and
    /// `output` on the last one.
    pub fn with_widths<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        let n = widths.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Dense::new(widths[i], widths[i + 1], act, true, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn inputs(&self) -> usize {
        self.layers.first().map_or(0, Dense::inputs)
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn macs(&self) -> usize {
        self.layers.iter().map(Dense::macs).sum()
    }

    pub fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        let mut layers = self.layers.iter();
        let Some(first) = layers.next() else {
            return x.clone();
        };
        let mut h = first.forward(x);
        for layer in layers {
            h = layer.forward(&h);
        }
        h
    }

    pub fn forward_trace(&self, x: &Array2<f32>) -> Trace {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(activations.last().expect("nonempty"));
            activations.push(next);
        }
        Trace { activations }
    }

    /// Backpropagates `grad_output` (dLoss/dOutput) through a recorded pass.
    /// Returns parameter gradients and dLoss/dInput.
    pub fn backward(&self, trace: &Trace, grad_output: &Array2<f32>) -> (Grads, Array2<f32>) {
        let mut grad = grad_output.clone();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            layer.activation.backprop(&mut grad, &trace.activations[i + 1]);
            let weight = trace.activations[i].t().dot(&grad);
            let bias = layer.bias.as_ref().map(|_| grad.sum_axis(Axis(0)));
            let upstream = grad.dot(&layer.weight.t());
            layers.push(LayerGrad { weight, bias });
            grad = upstream;
        }
        layers.reverse();
        (Grads { layers }, grad)
    }

    /// `self ← τ·source + (1 − τ)·self`, elementwise.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f32) {
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            dst.weight
                .zip_mut_with(&src.weight, |d, &s| *d = tau * s + (1.0 - tau) * *d);
            if let (Some(db), Some(sb)) = (dst.bias.as_mut(), src.bias.as_ref()) {
                db.zip_mut_with(sb, |d, &s| *d = tau * s + (1.0 - tau) * *d);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.iter().all(|v| v.is_finite())
                && l.bias.as_ref().is_none_or(|b| b.iter().all(|v| v.is_finite()))
        })
    }

    pub fn write_to(&self, w: &mut Writer) {
        w.u32(self.layers.len() as u32);
        for layer in &self.layers {
            w.u32(layer.inputs() as u32);
            w.u32(layer.outputs() as u32);
            w.u32(layer.activation.code());
            w.u32(u32::from(layer.bias.is_some()));
            w.f32s(layer.weight.iter().copied());
            if let Some(b) = &layer.bias {
                w.f32s(b.iter().copied());
            }
        }
    }

    pub fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        let count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let inputs = r.u32()? as usize;
            let outputs = r.u32()? as usize;
            let activation = Activation::from_code(r.u32()?)?;
            let has_bias = r.u32()? != 0;
            let weight = Array2::from_shape_vec((inputs, outputs), r.f32s(inputs * outputs)?)
                .map_err(|e| Error::Format(e.to_string()))?;
            let bias = if has_bias {
                Some(Array1::from_vec(r.f32s(outputs)?))
            } else {
                None
            };
            layers.push(Dense {
                weight,
                bias,
                activation,
            });
        }
        Ok(Self { layers })
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    step: i32,
    first: Vec<(Array2<f32>, Option<Array1<f32>>)>,
    second: Vec<(Array2<f32>, Option<Array1<f32>>)>,
}

impl Adam {
    pub fn new(model: &Mlp, lr: f32) -> Self {
        let zeros: Vec<_> = model
            .layers
            .iter()
            .map(|l| {
                (
                    Array2::zeros(l.weight.raw_dim()),
                    l.bias.as_ref().map(|b| Array1::zeros(b.len())),
                )
            })
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn apply(&mut self, model: &mut Mlp, grads: &Grads) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = self.lr;
        let update = |p: &mut f32, g: f32, m: &mut f32, v: &mut f32| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (i, layer) in model.layers.iter_mut().enumerate() {
            let g = &grads.layers[i];
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            ndarray::Zip::from(&mut layer.weight)
                .and(&g.weight)
                .and(&mut m.0)
                .and(&mut v.0)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            if let (Some(b), Some(gb), Some(mb), Some(vb)) =
                (layer.bias.as_mut(), g.bias.as_ref(), m.1.as_mut(), v.1.as_mut())
            {
                ndarray::Zip::from(b)
                    .and(gb)
                    .and(mb)
                    .and(vb)
                    .for_each(|p, &g, m, v| update(p, g, m, v));
            }
        }
    }
}

/// Mean squared error over all elements and its gradient w.r.t. `prediction`.
pub fn mse_loss(prediction: &Array2<f32>, target: &Array2<f32>) -> (f32, Array2<f32>) {
    let n = prediction.len().max(1) as f32;
    let diff = prediction - target;
    let loss = diff.iter().map(|d| d * d).sum::<f32>() / n;
    (loss, diff * (2.0 / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(rng: &mut ChaCha8Rng, act: Activation) -> Mlp {
        Mlp::with_widths(&[3, 5, 4, 2], act, Activation::Identity, rng)
    }

    fn loss_of(model: &Mlp, x: &Array2<f32>, y: &Array2<f32>) -> f64 {
        let out = model.forward(x);
        let n = out.len() as f64;
        out.iter()
            .zip(y.iter())
            .map(|(a, b)| ((*a - *b) as f64).powi(2))
            .sum::<f64>()
            / n
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for act in [Activation::Tanh, Activation::Relu] {
            let model = tiny(&mut rng, act);
            let x = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0f32));
            let y = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0f32));
            let trace = model.forward_trace(&x);
            let (_, grad_out) = mse_loss(trace.output(), &y);
            let (grads, _) = model.backward(&trace, &grad_out);
            for (li, layer) in model.layers.iter().enumerate() {
                for idx in [(0, 0), (1, 1), (2, 0)] {
                    if idx.0 >= layer.inputs() || idx.1 >= layer.outputs() {
                        continue;
                    }
                    let h = 1e-2f32;
                    let mut plus = model.clone();
                    plus.layers[li].weight[idx] += h;
                    let mut minus = model.clone();
                    minus.layers[li].weight[idx] -= h;
                    let fd = (loss_of(&plus, &x, &y) - loss_of(&minus, &x, &y)) / (2.0 * h as f64);
                    let an = grads.layers[li].weight[idx] as f64;
                    assert!((fd - an).abs() < 2e-3 + 2e-2 * an.abs(), "{act:?} layer {li}: {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = tiny(&mut rng, Activation::Tanh);
        let x = Array2::from_shape_fn((1, 3), |_| rng.random_range(-1.0..1.0f32));
        let trace = model.forward_trace(&x);
        let ones = Array2::from_elem((1, 2), 1.0f32);
        let (_, gx) = model.backward(&trace, &ones);
        for j in 0..3 {
            let h = 1e-2f32;
            let mut xp = x.clone();
            xp[(0, j)] += h;
            let mut xm = x.clone();
            xm[(0, j)] -= h;
            let fd = (model.forward(&xp).sum() - model.forward(&xm).sum()) / (2.0 * h);
            assert!((fd - gx[(0, j)]).abs() < 1e-3, "{fd} vs {}", gx[(0, j)]);
        }
    }

    #[test]
    fn soft_update_is_exact_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let main = tiny(&mut rng, Activation::Relu);
        let mut target = tiny(&mut rng, Activation::Relu);
        let before = target.clone();
        let tau = 0.005f32;
        target.soft_update_from(&main, tau);
        for ((t, b), m) in target.layers.iter().zip(&before.layers).zip(&main.layers) {
            for ((tv, bv), mv) in t.weight.iter().zip(b.weight.iter()).zip(m.weight.iter()) {
                assert_eq!(*tv, tau * mv + (1.0 - tau) * bv);
            }
        }
    }

    #[test]
    fn adam_fits_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut model = Mlp::with_widths(&[2, 1], Activation::Identity, Activation::Identity, &mut rng);
        let mut opt = Adam::new(&model, 0.05);
        let x = Array2::from_shape_fn((32, 2), |_| rng.random_range(-1.0..1.0f32));
        let y = x.map_axis(Axis(1), |r| 2.0 * r[0] - r[1] + 0.5).insert_axis(Axis(1));
        let mut last = f32::MAX;
        for _ in 0..500 {
            let trace = model.forward_trace(&x);
            let (loss, g) = mse_loss(trace.output(), &y);
            let (grads, _) = model.backward(&trace, &g);
            opt.apply(&mut model, &grads);
            last = loss;
        }
        assert!(last < 1e-4, "{last}");
    }

    #[test]
    fn serialization_round_trips_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = tiny(&mut rng, Activation::Tanh);
        let mut w = Writer::new();
        model.write_to(&mut w);
        let bytes = w.into_bytes();
        let back = Mlp::read_from(&mut Reader::new(&bytes)).unwrap();
        assert_eq!(back, model);
    }
}
