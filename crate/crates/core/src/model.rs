//! Single-layer LSTM with a fully connected sigmoid head.
//!
//! All parameters live in one flat buffer so that optimizers, checkpoints
//! and gradient checks can treat them uniformly. Gate order is
//! input, forget, cell, output. Each gate matrix is `H x (D + H)`,
//! row-major, applied to the concatenation `[x_t; h_{t-1}]`.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::Range;

use num_traits::Float;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::WindowSample;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation")]
    NonFiniteActivation,
    #[error("empty batch")]
    EmptyBatch,
}

/// Floating-point type the model computes in.
pub trait Real: Float + Debug + Default + Send + Sync + Sum + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f32(v: f32) -> Self {
        v as f64
    }
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f32(v: f32) -> Self {
        v
    }
}

pub const GATES: usize = 4;
pub const GATE_NAMES: [&str; GATES] = ["input", "forget", "cell", "output"];

/// Named parameter groups in buffer order.
pub const GROUP_NAMES: [&str; 10] = [
    "w_input", "w_forget", "w_cell", "w_output", "b_input", "b_forget", "b_cell", "b_output", "w_fc", "b_fc",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F = f64> {
    input_dim: usize,
    hidden_dim: usize,
    data: Vec<F>,
}

pub fn param_count(input_dim: usize, hidden_dim: usize) -> usize {
    GATES * hidden_dim * (input_dim + hidden_dim) + GATES * hidden_dim + hidden_dim + 1
}

impl<F: Real> ModelParams<F> {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        ModelParams { input_dim, hidden_dim, data: vec![F::zero(); param_count(input_dim, hidden_dim)] }
    }

    pub fn from_vec(input_dim: usize, hidden_dim: usize, data: Vec<F>) -> Result<Self, ModelError> {
        let expected = param_count(input_dim, hidden_dim);
        if data.len() != expected {
            return Err(ModelError::ShapeMismatch(format!("expected {expected} parameters, got {}", data.len())));
        }
        Ok(ModelParams { input_dim, hidden_dim, data })
    }

    /// Glorot-uniform gate and head weights, forget-gate bias 1, other biases 0.
    pub fn init(input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gate_limit = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        let gate = Uniform::new_inclusive(-gate_limit, gate_limit);
        for k in 0..GATES {
            let r = p.gate_weight_range(k);
            for v in &mut p.data[r] {
                *v = F::from_f64(gate.sample(&mut rng));
            }
        }
        let r = p.gate_bias_range(1);
        p.data[r].fill(F::one());
        let fc_limit = (6.0 / (hidden_dim + 1) as f64).sqrt();
        let fc = Uniform::new_inclusive(-fc_limit, fc_limit);
        let r = p.fc_weight_range();
        for v in &mut p.data[r] {
            *v = F::from_f64(fc.sample(&mut rng));
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn row_len(&self) -> usize {
        self.input_dim + self.hidden_dim
    }

    pub fn gate_weight_range(&self, k: usize) -> Range<usize> {
        let size = self.hidden_dim * self.row_len();
        k * size..(k + 1) * size
    }

    pub fn gate_bias_range(&self, k: usize) -> Range<usize> {
        let base = GATES * self.hidden_dim * self.row_len();
        base + k * self.hidden_dim..base + (k + 1) * self.hidden_dim
    }

    pub fn fc_weight_range(&self) -> Range<usize> {
        let base = GATES * self.hidden_dim * (self.row_len() + 1);
        base..base + self.hidden_dim
    }

    pub fn fc_bias_index(&self) -> usize {
        self.data.len() - 1
    }

    /// Ranges matching [`GROUP_NAMES`].
    pub fn groups(&self) -> Vec<(&'static str, Range<usize>)> {
        let mut out = Vec::with_capacity(GROUP_NAMES.len());
        for k in 0..GATES {
            out.push((GROUP_NAMES[k], self.gate_weight_range(k)));
        }
        for k in 0..GATES {
            out.push((GROUP_NAMES[GATES + k], self.gate_bias_range(k)));
        }
        out.push(("w_fc", self.fc_weight_range()));
        let b = self.fc_bias_index();
        out.push(("b_fc", b..b + 1));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        ModelParams {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            data: self.data.iter().map(|v| G::from_f64(Real::to_f64(*v))).collect(),
        }
    }

    pub fn same_shape<G>(&self, other: &ModelParams<G>) -> bool {
        self.input_dim == other.input_dim && self.hidden_dim == other.hidden_dim && self.data.len() == other.data.len()
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }

    fn scale(&mut self, s: F) {
        for a in &mut self.data {
            *a = *a * s;
        }
    }
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Per-step activations retained for backpropagation.
#[derive(Debug, Clone)]
pub struct StepTape<F> {
    /// `[x_t; h_{t-1}]`
    pub z: Vec<F>,
    pub c_prev: Vec<F>,
    pub i: Vec<F>,
    pub f: Vec<F>,
    pub g: Vec<F>,
    pub o: Vec<F>,
    pub tanh_c: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct Tape<F> {
    pub steps: Vec<StepTape<F>>,
    pub h_last: Vec<F>,
    pub y: F,
}

/// Runs the window through the LSTM from a zero state and returns the
/// sigmoid output together with the activations of every step.
pub fn forward<F: Real, X: AsRef<[f32]>>(params: &ModelParams<F>, frames: &[X]) -> Result<(F, Tape<F>), ModelError> {
    let d = params.input_dim;
    let h_dim = params.hidden_dim;
    let row = params.row_len();
    if frames.is_empty() {
        return Err(ModelError::ShapeMismatch("window has no frames".into()));
    }
    let mut h = vec![F::zero(); h_dim];
    let mut c = vec![F::zero(); h_dim];
    let mut steps = Vec::with_capacity(frames.len());
    let mut pre = vec![F::zero(); GATES * h_dim];
    for x in frames {
        let x = x.as_ref();
        if x.len() != d {
            return Err(ModelError::ShapeMismatch(format!("frame has {} features, model expects {d}", x.len())));
        }
        let mut z = Vec::with_capacity(row);
        z.extend(x.iter().map(|&v| F::from_f32(v)));
        z.extend_from_slice(&h);
        for k in 0..GATES {
            let w = &params.data[params.gate_weight_range(k)];
            let b = &params.data[params.gate_bias_range(k)];
            for j in 0..h_dim {
                let wr = &w[j * row..(j + 1) * row];
                let mut acc = b[j];
                for (wv, zv) in wr.iter().zip(&z) {
                    acc = acc + *wv * *zv;
                }
                pre[k * h_dim + j] = acc;
            }
        }
        let i: Vec<F> = pre[..h_dim].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<F> = pre[h_dim..2 * h_dim].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<F> = pre[2 * h_dim..3 * h_dim].iter().map(|&v| v.tanh()).collect();
        let o: Vec<F> = pre[3 * h_dim..].iter().map(|&v| sigmoid(v)).collect();
        let c_prev = c.clone();
        for j in 0..h_dim {
            c[j] = f[j] * c_prev[j] + i[j] * g[j];
        }
        let tanh_c: Vec<F> = c.iter().map(|v| v.tanh()).collect();
        for j in 0..h_dim {
            h[j] = o[j] * tanh_c[j];
        }
        steps.push(StepTape { z, c_prev, i, f, g, o, tanh_c });
    }
    let w_fc = &params.data[params.fc_weight_range()];
    let mut y_pre = params.data[params.fc_bias_index()];
    for (w, hv) in w_fc.iter().zip(&h) {
        y_pre = y_pre + *w * *hv;
    }
    let y = sigmoid(y_pre);
    if !y.is_finite() {
        return Err(ModelError::NonFiniteActivation);
    }
    Ok((y, Tape { steps, h_last: h, y }))
}

/// Engagement prediction for one window.
pub fn predict<F: Real>(params: &ModelParams<F>, sample: &WindowSample) -> Result<F, ModelError> {
    forward(params, &sample.features).map(|(y, _)| y)
}

/// Accumulates `dL/dparams` into `grads` given `dL/dy` for one window.
pub fn backward<F: Real>(params: &ModelParams<F>, tape: &Tape<F>, dy: F, grads: &mut ModelParams<F>) {
    let h_dim = params.hidden_dim;
    let row = params.row_len();
    let d = params.input_dim;
    let y = tape.y;
    let dy_pre = dy * y * (F::one() - y);
    let fc = params.fc_weight_range();
    let w_fc = &params.data[fc.clone()];
    for j in 0..h_dim {
        grads.data[fc.start + j] = grads.data[fc.start + j] + dy_pre * tape.h_last[j];
    }
    let bi = params.fc_bias_index();
    grads.data[bi] = grads.data[bi] + dy_pre;

    let mut dh: Vec<F> = w_fc.iter().map(|&w| w * dy_pre).collect();
    let mut dc = vec![F::zero(); h_dim];
    let mut dpre = vec![F::zero(); GATES * h_dim];
    for step in tape.steps.iter().rev() {
        for j in 0..h_dim {
            let d_o = dh[j] * step.tanh_c[j];
            let dtc = dh[j] * step.o[j];
            dc[j] = dc[j] + dtc * (F::one() - step.tanh_c[j] * step.tanh_c[j]);
            let di = dc[j] * step.g[j];
            let dg = dc[j] * step.i[j];
            let df = dc[j] * step.c_prev[j];
            dpre[j] = di * step.i[j] * (F::one() - step.i[j]);
            dpre[h_dim + j] = df * step.f[j] * (F::one() - step.f[j]);
            dpre[2 * h_dim + j] = dg * (F::one() - step.g[j] * step.g[j]);
            dpre[3 * h_dim + j] = d_o * step.o[j] * (F::one() - step.o[j]);
            dc[j] = dc[j] * step.f[j];
        }
        let mut dz = vec![F::zero(); row];
        for k in 0..GATES {
            let wr = params.gate_weight_range(k);
            let br = params.gate_bias_range(k);
            for j in 0..h_dim {
                let g = dpre[k * h_dim + j];
                if g == F::zero() {
                    continue;
                }
                grads.data[br.start + j] = grads.data[br.start + j] + g;
                let base = wr.start + j * row;
                let w = &params.data[base..base + row];
                let gw = &mut grads.data[base..base + row];
                for m in 0..row {
                    gw[m] = gw[m] + g * step.z[m];
                    dz[m] = dz[m] + w[m] * g;
                }
            }
        }
        dh.copy_from_slice(&dz[d..]);
    }
}

fn check_batch<F: Real>(params: &ModelParams<F>, batch: &[WindowSample]) -> Result<(), ModelError> {
    let Some(first) = batch.first() else {
        return Err(ModelError::EmptyBatch);
    };
    let w = first.window_len();
    for s in batch {
        if s.window_len() != w {
            return Err(ModelError::ShapeMismatch("samples have different window lengths".into()));
        }
        if let Some(x) = s.features.iter().find(|x| x.len() != params.input_dim) {
            return Err(ModelError::ShapeMismatch(format!(
                "sample has {} features, model expects {}",
                x.len(),
                params.input_dim
            )));
        }
    }
    Ok(())
}

/// Squared error and unscaled gradient for samples `lo..hi`, reduced over a
/// fixed binary tree so the result does not depend on the thread count.
fn tree_grad<F: Real>(params: &ModelParams<F>, batch: &[WindowSample], lo: usize, hi: usize) -> Result<(F, ModelParams<F>), ModelError> {
    if hi - lo == 1 {
        let s = &batch[lo];
        let (y, tape) = forward(params, &s.features)?;
        let r = y - F::from_f64(s.label);
        let mut g = ModelParams::zeros(params.input_dim, params.hidden_dim);
        backward(params, &tape, r + r, &mut g);
        return Ok((r * r, g));
    }
    let mid = lo + (hi - lo) / 2;
    let (left, right) = rayon::join(|| tree_grad(params, batch, lo, mid), || tree_grad(params, batch, mid, hi));
    let (le, mut lg) = left?;
    let (re, rg) = right?;
    lg.add_assign(&rg);
    Ok((le + re, lg))
}

/// Mean squared error over the batch and its gradient.
pub fn loss_and_gradients<F: Real>(params: &ModelParams<F>, batch: &[WindowSample]) -> Result<(F, ModelParams<F>), ModelError> {
    check_batch(params, batch)?;
    let (sse, mut grads) = tree_grad(params, batch, 0, batch.len())?;
    let inv = F::one() / F::from_f64(batch.len() as f64);
    grads.scale(inv);
    Ok((sse * inv, grads))
}

/// Mean squared error only.
pub fn mse<F: Real>(params: &ModelParams<F>, samples: &[WindowSample]) -> Result<F, ModelError> {
    check_batch(params, samples)?;
    let errs: Vec<F> = samples
        .par_iter()
        .map(|s| predict(params, s).map(|y| (y - F::from_f64(s.label)).powi(2)))
        .collect::<Result<_, _>>()?;
    let sum = errs.iter().fold(F::zero(), |a, &b| a + b);
    Ok(sum / F::from_f64(samples.len() as f64))
}
