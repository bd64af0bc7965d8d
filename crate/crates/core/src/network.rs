//! Bias-free homogeneous multilayer networks.
//!
//! Layers are stored in forward order: `layers[0]` maps the (optionally
//! augmented) input to the first hidden layer and the last layer produces the
//! scalar output. With `L` weight matrices and a ReLU or linear activation the
//! network is positively homogeneous of degree `L` in its parameters.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Clarke selection with σ'(0) = 0 for ReLU.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged matrix rows".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Network parameters θ = [W_1, …, W_L] in forward order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub layers: Vec<Matrix>,
}

impl Params {
    pub fn zeros_like(other: &Params) -> Params {
        Params {
            layers: other
                .layers
                .iter()
                .map(|m| Matrix::zeros(m.rows, m.cols))
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|m| m.data.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|m| m.data.iter().copied())
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|m| m.data.iter())
    }

    pub fn scaled(&self, c: f64) -> Params {
        let mut out = self.clone();
        out.scale(c);
        out
    }

    pub fn scale(&mut self, c: f64) {
        for m in &mut self.layers {
            m.data.iter_mut().for_each(|v| *v *= c);
        }
    }

    /// self += c·other
    pub fn axpy(&mut self, c: f64, other: &Params) {
        for (m, o) in self.layers.iter_mut().zip(&other.layers) {
            for (v, w) in m.data.iter_mut().zip(&o.data) {
                *v += c * w;
            }
        }
    }

    pub fn dot(&self, other: &Params) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// Per-example margins q_i = y_i f(θ, x_i).
#[derive(Debug, Clone, PartialEq)]
pub struct MarginVector {
    pub q: Vec<f64>,
    pub q_min: f64,
    pub argmin: usize,
}

impl MarginVector {
    pub fn from_margins(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut argmin = 0;
        for (i, &v) in q.iter().enumerate() {
            if v < q[argmin] {
                argmin = i;
            }
        }
        Ok(MarginVector {
            q_min: q[argmin],
            argmin,
            q,
        })
    }
}

/// Exponential loss in factored form: ∇ℒ = −exp(log_loss)·grad_hat.
#[derive(Debug, Clone)]
pub struct LossGrad {
    /// ln ℒ = LSE(−q_1, …, −q_K).
    pub log_loss: f64,
    /// Σ_i p_i y_i ∂°f(θ, x_i), the normalized descent direction.
    pub grad_hat: Params,
    /// p_i = exp(−q_i − log_loss).
    pub softmax_weights: Vec<f64>,
    pub margins: MarginVector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerCheck {
    pub residual: f64,
    /// True when some hidden pre-activation is exactly at the ReLU kink.
    pub at_kink: bool,
}

/// Numerically stable log Σ exp(v_i).
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HomogeneousNet {
    widths: Vec<usize>,
    activation: Activation,
    input_bias: bool,
}

impl HomogeneousNet {
    /// `widths = [d_in, h_1, …, 1]`; `d_in` counts the constant coordinate
    /// when `input_bias` is set.
    pub fn new(widths: Vec<usize>, activation: Activation, input_bias: bool) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Shape(format!(
                "net.widths needs at least two entries, got {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(Error::Shape(format!("net.widths entries must be positive: {widths:?}")));
        }
        if *widths.last().unwrap() != 1 {
            return Err(Error::Shape(format!(
                "output width must be 1, got {}",
                widths.last().unwrap()
            )));
        }
        if input_bias && widths[0] < 2 {
            return Err(Error::Shape(
                "input_bias requires an input width of at least 2".into(),
            ));
        }
        Ok(HomogeneousNet {
            widths,
            activation,
            input_bias,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_bias(&self) -> bool {
        self.input_bias
    }

    /// Homogeneity degree L (number of weight matrices).
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    /// Dimension of raw inputs before augmentation.
    pub fn data_dim(&self) -> usize {
        self.widths[0] - usize::from(self.input_bias)
    }

    pub fn zero_params(&self) -> Params {
        Params {
            layers: self
                .widths
                .windows(2)
                .map(|w| Matrix::zeros(w[1], w[0]))
                .collect(),
        }
    }

    pub fn check_params(&self, theta: &Params) -> Result<()> {
        if theta.layers.len() != self.depth() {
            return Err(Error::Shape(format!(
                "expected {} layers, got {}",
                self.depth(),
                theta.layers.len()
            )));
        }
        for (i, (m, w)) in theta.layers.iter().zip(self.widths.windows(2)).enumerate() {
            if m.rows != w[1] || m.cols != w[0] || m.data.len() != w[0] * w[1] {
                return Err(Error::Shape(format!(
                    "layer {i}: expected {}x{}, got {}x{}",
                    w[1], w[0], m.rows, m.cols
                )));
            }
        }
        Ok(())
    }

    fn augment(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.data_dim() {
            return Err(Error::Shape(format!(
                "input has dimension {}, network expects {}",
                x.len(),
                self.data_dim()
            )));
        }
        let mut v = x.to_vec();
        if self.input_bias {
            v.push(1.0);
        }
        Ok(v)
    }

    /// Runs the forward pass, returning pre-activations per layer; the last
    /// entry holds the scalar output.
    fn forward_trace(&self, theta: &Params, input: &[f64]) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.depth());
        let mut act: Vec<f64> = input.to_vec();
        let last = self.depth() - 1;
        for (k, m) in theta.layers.iter().enumerate() {
            let z: Vec<f64> = (0..m.rows)
                .map(|r| m.row(r).iter().zip(&act).map(|(w, a)| w * a).sum())
                .collect();
            if k < last {
                act = z.iter().map(|&v| self.activation.apply(v)).collect();
            }
            pre.push(z);
        }
        pre
    }

    pub fn forward(&self, theta: &Params, x: &[f64]) -> Result<f64> {
        self.check_params(theta)?;
        let input = self.augment(x)?;
        Ok(self.forward_trace(theta, &input)[self.depth() - 1][0])
    }

    /// Accumulates `weight · ∂°f(θ, x)` into `out`.
    fn backprop_into(
        &self,
        theta: &Params,
        input: &[f64],
        pre: &[Vec<f64>],
        weight: f64,
        out: &mut Params,
    ) {
        let depth = self.depth();
        let mut delta = vec![weight];
        for k in (0..depth).rev() {
            let m = &theta.layers[k];
            let g = &mut out.layers[k];
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut g.data[r * m.cols..(r + 1) * m.cols];
                if k == 0 {
                    for (gv, a) in row.iter_mut().zip(input) {
                        *gv += d * a;
                    }
                } else {
                    for (gv, &z) in row.iter_mut().zip(&pre[k - 1]) {
                        *gv += d * self.activation.apply(z);
                    }
                }
            }
            if k > 0 {
                let mut next = vec![0.0; m.cols];
                for (r, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (nv, w) in next.iter_mut().zip(m.row(r)) {
                        *nv += d * w;
                    }
                }
                for (nv, &z) in next.iter_mut().zip(&pre[k - 1]) {
                    *nv *= self.activation.derivative(z);
                }
                delta = next;
            }
        }
    }

    /// The Clarke-selected subgradient ∂°f(θ, x).
    pub fn subgradient(&self, theta: &Params, x: &[f64]) -> Result<Params> {
        self.check_params(theta)?;
        let input = self.augment(x)?;
        let pre = self.forward_trace(theta, &input);
        let mut g = Params::zeros_like(theta);
        self.backprop_into(theta, &input, &pre, 1.0, &mut g);
        Ok(g)
    }

    pub fn margins(&self, theta: &Params, data: &Dataset) -> Result<MarginVector> {
        self.check_params(theta)?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (_, q) = self.chunked_forward(theta, data)?;
        MarginVector::from_margins(q)
    }

    /// Forward pass over the whole dataset. Layer activations are stored
    /// feature-major (row c holds feature c for every example) so the inner
    /// loops run over examples.
    fn batch_forward(&self, theta: &Params, inputs: &[Vec<f64>]) -> Result<Batch> {
        let k = inputs.len();
        let d = self.widths[0];
        let mut input = vec![0.0; d * k];
        for (i, x) in inputs.iter().enumerate() {
            if x.len() != self.data_dim() {
                return Err(Error::Shape(format!(
                    "input has dimension {}, network expects {}",
                    x.len(),
                    self.data_dim()
                )));
            }
            for (c, v) in x.iter().enumerate() {
                input[c * k + i] = *v;
            }
            if self.input_bias {
                input[(d - 1) * k + i] = 1.0;
            }
        }
        let last = self.depth() - 1;
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.depth());
        let mut act = input.clone();
        for (layer, m) in theta.layers.iter().enumerate() {
            let mut z = vec![0.0; m.rows * k];
            for r in 0..m.rows {
                let zr = &mut z[r * k..(r + 1) * k];
                for (c, &w) in m.row(r).iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for (zv, a) in zr.iter_mut().zip(&act[c * k..(c + 1) * k]) {
                        *zv += w * a;
                    }
                }
            }
            if layer < last {
                act = z.iter().map(|&v| self.activation.apply(v)).collect();
            }
            pre.push(z);
        }
        Ok(Batch { input, pre, k })
    }

    /// Adds Σ_i weights_i · ∂°f(θ, x_i) over a stored batch to `out`.
    fn batch_backprop(&self, theta: &Params, batch: &Batch, weights: &[f64], out: &mut Params) {
        let k = batch.k;
        let mut delta = weights.to_vec();
        for layer in (0..self.depth()).rev() {
            let m = &theta.layers[layer];
            let prev_act: Vec<f64>;
            let prev: &[f64] = if layer == 0 {
                &batch.input
            } else {
                prev_act = batch.pre[layer - 1].iter().map(|&v| self.activation.apply(v)).collect();
                &prev_act
            };
            let g = &mut out.layers[layer];
            for r in 0..m.rows {
                let dr = &delta[r * k..(r + 1) * k];
                for c in 0..m.cols {
                    g.data[r * m.cols + c] += dr.iter().zip(&prev[c * k..(c + 1) * k]).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            if layer > 0 {
                let mut next = vec![0.0; m.cols * k];
                for r in 0..m.rows {
                    let dr = &delta[r * k..(r + 1) * k];
                    for (c, &w) in m.row(r).iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        for (nv, d) in next[c * k..(c + 1) * k].iter_mut().zip(dr) {
                            *nv += w * d;
                        }
                    }
                }
                for (nv, &z) in next.iter_mut().zip(&batch.pre[layer - 1]) {
                    *nv *= self.activation.derivative(z);
                }
                delta = next;
            }
        }
    }

    /// Forward passes over `data` in chunks of [`CHUNK`] examples.
    fn chunked_forward(&self, theta: &Params, data: &Dataset) -> Result<(Vec<Batch>, Vec<f64>)> {
        let last = self.depth() - 1;
        let mut batches = Vec::with_capacity(data.len().div_ceil(CHUNK));
        let mut q = Vec::with_capacity(data.len());
        for (inputs, labels) in data.inputs().chunks(CHUNK).zip(data.labels().chunks(CHUNK)) {
            let b = self.batch_forward(theta, inputs)?;
            q.extend(labels.iter().zip(&b.pre[last]).map(|(y, f)| y * f));
            batches.push(b);
        }
        Ok((batches, q))
    }

    pub fn loss_and_grad(&self, theta: &Params, data: &Dataset) -> Result<LossGrad> {
        self.check_params(theta)?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (batches, q) = self.chunked_forward(theta, data)?;
        let neg_q: Vec<f64> = q.iter().map(|v| -v).collect();
        let log_loss = log_sum_exp(&neg_q);
        let softmax_weights: Vec<f64> = neg_q.iter().map(|v| (v - log_loss).exp()).collect();
        let signed: Vec<f64> = softmax_weights.iter().zip(data.labels()).map(|(p, y)| p * y).collect();
        let mut grad_hat = Params::zeros_like(theta);
        for (b, w) in batches.iter().zip(signed.chunks(CHUNK)) {
            self.batch_backprop(theta, b, w, &mut grad_hat);
        }
        Ok(LossGrad {
            log_loss,
            grad_hat,
            softmax_weights,
            margins: MarginVector::from_margins(q)?,
        })
    }

    /// |⟨θ, h⟩ − L·f(θ, x)| for the selected subgradient h.
    pub fn euler_residual(&self, theta: &Params, x: &[f64]) -> Result<EulerCheck> {
        self.check_params(theta)?;
        let input = self.augment(x)?;
        let pre = self.forward_trace(theta, &input);
        let at_kink = self.activation == Activation::Relu
            && pre[..self.depth() - 1]
                .iter()
                .any(|layer| layer.iter().any(|&z| z == 0.0));
        let mut h = Params::zeros_like(theta);
        self.backprop_into(theta, &input, &pre, 1.0, &mut h);
        let f = pre[self.depth() - 1][0];
        Ok(EulerCheck {
            residual: (theta.dot(&h) - self.depth() as f64 * f).abs(),
            at_kink,
        })
    }

    /// Fraction of examples with y_i f(θ, x_i) > 0.
    pub fn accuracy(&self, theta: &Params, data: &Dataset) -> Result<f64> {
        let m = self.margins(theta, data)?;
        Ok(m.q.iter().filter(|&&v| v > 0.0).count() as f64 / m.q.len() as f64)
    }
}

/// Examples per batched forward/backward pass; keeps buffers small.
const CHUNK: usize = 64;

struct Batch {
    /// Augmented inputs, feature-major.
    input: Vec<f64>,
    /// Pre-activations per layer, feature-major.
    pre: Vec<Vec<f64>>,
    k: usize,
}
