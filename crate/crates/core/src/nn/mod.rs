//! Minimal deterministic neural-network kernel.
//!
//! Exactly what the two model architectures need: dense and 1-D convolution
//! layers with ReLU, global average pooling, MSE and softmax cross-entropy
//! losses, reverse-mode gradients, Adam, and a binary model format. All math
//! is 64-bit and single-threaded; a fixed seed and data order give
//! bit-identical results.

pub mod adam;
pub mod format;
pub mod gradcheck;

pub use adam::{AdamConfig, AdamState};
pub use format::{load_model, save_model, ModelFormatError, ModelMeta};

use thiserror::Error;

use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("input is empty")]
    EmptyInput,
    #[error("input of {len} samples is shorter than the kernel ({kernel_len})")]
    InputTooShort { len: usize, kernel_len: usize },
    #[error("cannot pool over an empty time axis")]
    EmptyTimeAxis,
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("vector lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("gradient layout does not match the network")]
    GradientMismatch,
}

/// Element-wise activation. The ReLU subgradient at exactly 0 is taken as 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
        }
    }

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
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer: y = act(W x + b), weights row-major `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        DenseLayer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)). ReLU layers
    /// get a small positive bias so units start alive; identity layers start
    /// at zero bias.
    pub fn glorot(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        DenseLayer {
            in_dim,
            out_dim,
            weights: (0..in_dim * out_dim).map(|_| rng.range(-limit, limit)).collect(),
            bias: vec![init_bias(activation); out_dim],
            activation,
        }
    }

    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.in_dim..(o + 1) * self.in_dim]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        if x.len() != self.in_dim {
            return Err(NnError::ShapeMismatch {
                context: "dense input",
                expected: self.in_dim,
                actual: x.len(),
            });
        }
        Ok((0..self.out_dim)
            .map(|o| self.activation.apply(dot(self.row(o), x) + self.bias[o]))
            .collect())
    }
}

/// 1-D convolution over a single input channel: stride 1, no padding,
/// kernels row-major `filters x kernel_len`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1dLayer {
    pub n_filters: usize,
    pub kernel_len: usize,
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Conv1dLayer {
    pub fn zeros(n_filters: usize, kernel_len: usize, activation: Activation) -> Self {
        Conv1dLayer {
            n_filters,
            kernel_len,
            kernels: vec![0.0; n_filters * kernel_len],
            bias: vec![0.0; n_filters],
            activation,
        }
    }

    pub fn glorot(
        n_filters: usize,
        kernel_len: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = kernel_len;
        let fan_out = kernel_len * n_filters;
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Conv1dLayer {
            n_filters,
            kernel_len,
            kernels: (0..n_filters * kernel_len)
                .map(|_| rng.range(-limit, limit))
                .collect(),
            bias: vec![init_bias(activation); n_filters],
            activation,
        }
    }

    fn kernel(&self, f: usize) -> &[f64] {
        &self.kernels[f * self.kernel_len..(f + 1) * self.kernel_len]
    }

    /// Output positions for an input of `len` samples.
    pub fn out_positions(&self, len: usize) -> Result<usize, NnError> {
        if len < self.kernel_len {
            return Err(NnError::InputTooShort {
                len,
                kernel_len: self.kernel_len,
            });
        }
        Ok(len - self.kernel_len + 1)
    }

    /// Full feature map as a `filters x positions` matrix.
    pub fn forward(&self, x: &[f64]) -> Result<Feature, NnError> {
        let t_out = self.out_positions(x.len())?;
        let mut data = vec![0.0; self.n_filters * t_out];
        for f in 0..self.n_filters {
            let k = self.kernel(f);
            let b = self.bias[f];
            let row = &mut data[f * t_out..(f + 1) * t_out];
            for (t, out) in row.iter_mut().enumerate() {
                *out = self.activation.apply(dot(k, &x[t..t + self.kernel_len]) + b);
            }
        }
        Ok(Feature {
            rows: self.n_filters,
            cols: t_out,
            data,
        })
    }
}

/// ReLU units start with a small positive bias; with symmetric weights and
/// nonnegative inputs a zero-bias ReLU unit has even odds of being born dead
/// and never receiving gradient again.
fn init_bias(activation: Activation) -> f64 {
    match activation {
        Activation::Relu => 0.1,
        Activation::Identity => 0.0,
    }
}

/// Mean over the time axis of a `rows x cols` feature map.
pub fn global_avg_pool(m: &Feature) -> Result<Vec<f64>, NnError> {
    if m.cols == 0 {
        return Err(NnError::EmptyTimeAxis);
    }
    let scale = 1.0 / m.cols as f64;
    Ok((0..m.rows)
        .map(|r| m.row(r).iter().sum::<f64>() * scale)
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense(DenseLayer),
    Conv1d(Conv1dLayer),
    GlobalAvgPool,
}

impl Layer {
    fn out_shape(&self, input: (usize, usize)) -> Result<(usize, usize), NnError> {
        let (rows, cols) = input;
        match self {
            Layer::Dense(d) => {
                if cols != 1 {
                    return Err(NnError::ShapeMismatch {
                        context: "dense expects a vector",
                        expected: 1,
                        actual: cols,
                    });
                }
                if rows != d.in_dim {
                    return Err(NnError::ShapeMismatch {
                        context: "dense input",
                        expected: d.in_dim,
                        actual: rows,
                    });
                }
                Ok((d.out_dim, 1))
            }
            Layer::Conv1d(c) => {
                if cols != 1 {
                    return Err(NnError::ShapeMismatch {
                        context: "conv1d expects a vector",
                        expected: 1,
                        actual: cols,
                    });
                }
                Ok((c.n_filters, c.out_positions(rows)?))
            }
            Layer::GlobalAvgPool => {
                if cols == 0 {
                    return Err(NnError::EmptyTimeAxis);
                }
                Ok((rows, 1))
            }
        }
    }

    fn param_count(&self) -> usize {
        match self {
            Layer::Dense(d) => d.weights.len() + d.bias.len(),
            Layer::Conv1d(c) => c.kernels.len() + c.bias.len(),
            Layer::GlobalAvgPool => 0,
        }
    }
}

/// A row-major matrix of activations; vectors have `cols == 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Feature {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Feature {
    fn with_shape(rows: usize, cols: usize) -> Self {
        Feature {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// An ordered list of layers applied in sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Network { layers }
    }

    /// Exact element count of all weights and biases.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Shapes of the input and every layer output for a vector input.
    fn shapes(&self, input_len: usize) -> Result<Vec<(usize, usize)>, NnError> {
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        shapes.push((input_len, 1));
        for layer in &self.layers {
            let next = layer.out_shape(*shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Runs the network on a vector input, allocating as needed.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut scratch = Scratch::new(self, x.len())?;
        self.forward_trace(x, &mut scratch)?;
        Ok(scratch.output().data.clone())
    }

    /// Forward pass writing all intermediates into `scratch`.
    pub fn forward_trace(&self, x: &[f64], scratch: &mut Scratch) -> Result<(), NnError> {
        if x.len() != scratch.acts[0].rows {
            return Err(NnError::ShapeMismatch {
                context: "network input",
                expected: scratch.acts[0].rows,
                actual: x.len(),
            });
        }
        scratch.acts[0].data.copy_from_slice(x);
        for (i, layer) in self.layers.iter().enumerate() {
            let (before, after) = scratch.acts.split_at_mut(i + 1);
            let input = &before[i];
            let out = &mut after[0];
            let z = &mut scratch.zs[i];
            match layer {
                Layer::Dense(d) => {
                    for o in 0..d.out_dim {
                        let zv = dot(d.row(o), &input.data) + d.bias[o];
                        z.data[o] = zv;
                        out.data[o] = d.activation.apply(zv);
                    }
                }
                Layer::Conv1d(c) => {
                    let t_out = out.cols;
                    for f in 0..c.n_filters {
                        let k = c.kernel(f);
                        let b = c.bias[f];
                        let z_row = &mut z.data[f * t_out..(f + 1) * t_out];
                        for (t, zt) in z_row.iter_mut().enumerate() {
                            *zt = dot(k, &input.data[t..t + c.kernel_len]) + b;
                        }
                    }
                    for (o, &zv) in out.data.iter_mut().zip(&z.data) {
                        *o = c.activation.apply(zv);
                    }
                }
                Layer::GlobalAvgPool => {
                    let scale = 1.0 / input.cols as f64;
                    for r in 0..input.rows {
                        let v = input.row(r).iter().sum::<f64>() * scale;
                        z.data[r] = v;
                        out.data[r] = v;
                    }
                }
            }
        }
        Ok(())
    }

    /// Loss of the network output against a target, no gradients.
    pub fn loss(&self, x: &[f64], target: &LossTarget) -> Result<f64, NnError> {
        let y = self.forward(x)?;
        match target {
            LossTarget::Mse(t) => mse(&y, t),
            LossTarget::CrossEntropy(label) => {
                Ok(softmax_cross_entropy(&y, *label)?.0)
            }
        }
    }

    /// Single-sample reverse-mode gradients of the scalar loss.
    pub fn backward(&self, x: &[f64], target: &LossTarget) -> Result<(f64, Gradients), NnError> {
        let mut scratch = Scratch::new(self, x.len())?;
        let mut grads = Gradients::zeros_like(self);
        self.forward_trace(x, &mut scratch)?;
        let loss = self.backward_from_trace(&mut scratch, target, &mut grads, 1.0)?;
        Ok((loss, grads))
    }

    /// Backward pass over a previously traced forward run. Gradients are
    /// accumulated scaled by `scale` (so batch averaging is a single pass).
    /// The gradient w.r.t. the network input is never materialized for the
    /// first layer.
    pub fn backward_from_trace(
        &self,
        scratch: &mut Scratch,
        target: &LossTarget,
        grads: &mut Gradients,
        scale: f64,
    ) -> Result<f64, NnError> {
        if grads.layers.len() != self.layers.len() {
            return Err(NnError::GradientMismatch);
        }
        let n_layers = self.layers.len();
        let out = &scratch.acts[n_layers];

        // Loss and gradient w.r.t. the final output.
        let loss = match target {
            LossTarget::Mse(t) => {
                let y = &out.data;
                if y.len() != t.len() {
                    return Err(NnError::LengthMismatch {
                        left: y.len(),
                        right: t.len(),
                    });
                }
                if y.is_empty() {
                    return Err(NnError::EmptyInput);
                }
                let inv_n = 1.0 / y.len() as f64;
                let mut acc = 0.0;
                for (i, (&yi, &ti)) in y.iter().zip(t.iter()).enumerate() {
                    let d = yi - ti;
                    acc += d * d;
                    scratch.delta_a[i] = 2.0 * d * inv_n;
                }
                acc * inv_n
            }
            LossTarget::CrossEntropy(label) => {
                let (loss, grad) = softmax_cross_entropy(&out.data, *label)?;
                scratch.delta_a[..grad.len()].copy_from_slice(&grad);
                loss
            }
        };

        // delta_a currently holds dL/d(output of last layer).
        let mut cur_in_a = true;
        for i in (0..n_layers).rev() {
            let (delta, next) = if cur_in_a {
                (&mut scratch.delta_a, &mut scratch.delta_b)
            } else {
                (&mut scratch.delta_b, &mut scratch.delta_a)
            };
            let input = &scratch.acts[i];
            let z = &scratch.zs[i];
            let g = &mut grads.layers[i];
            let need_input_grad = i > 0;
            match &self.layers[i] {
                Layer::Dense(d) => {
                    for (dv, &zv) in delta[..d.out_dim].iter_mut().zip(&z.data) {
                        *dv *= d.activation.derivative(zv);
                    }
                    for o in 0..d.out_dim {
                        let dz = delta[o];
                        g.bias[o] += scale * dz;
                        axpy(
                            &mut g.weights[o * d.in_dim..(o + 1) * d.in_dim],
                            scale * dz,
                            &input.data,
                        );
                    }
                    if need_input_grad {
                        next[..d.in_dim].fill(0.0);
                        for o in 0..d.out_dim {
                            axpy(&mut next[..d.in_dim], delta[o], d.row(o));
                        }
                    }
                }
                Layer::GlobalAvgPool => {
                    // d mean / d cell = 1 / cols
                    let scale_t = 1.0 / input.cols as f64;
                    for r in 0..input.rows {
                        let v = delta[r] * scale_t;
                        next[r * input.cols..(r + 1) * input.cols].fill(v);
                    }
                }
                Layer::Conv1d(c) => {
                    let t_out = z.cols;
                    for (dv, &zv) in delta[..c.n_filters * t_out].iter_mut().zip(&z.data) {
                        *dv *= c.activation.derivative(zv);
                    }
                    for f in 0..c.n_filters {
                        let d_row = &delta[f * t_out..(f + 1) * t_out];
                        g.bias[f] += scale * d_row.iter().sum::<f64>();
                        let gk = &mut g.kernels_mut()[f * c.kernel_len..(f + 1) * c.kernel_len];
                        for (j, gkj) in gk.iter_mut().enumerate() {
                            *gkj += scale * dot(d_row, &input.data[j..j + t_out]);
                        }
                    }
                    if need_input_grad {
                        next[..input.rows].fill(0.0);
                        for f in 0..c.n_filters {
                            let k = c.kernel(f);
                            let d_row = &delta[f * t_out..(f + 1) * t_out];
                            for (t, &dz) in d_row.iter().enumerate() {
                                axpy(&mut next[t..t + c.kernel_len], dz, k);
                            }
                        }
                    }
                }
            }
            cur_in_a = !cur_in_a;
        }
        Ok(loss)
    }

    /// Mutable access to one parameter by flat index (layer order, weights
    /// then bias within a layer).
    pub fn param_mut(&mut self, mut idx: usize) -> Option<&mut f64> {
        for layer in &mut self.layers {
            let (w, b): (&mut Vec<f64>, &mut Vec<f64>) = match layer {
                Layer::Dense(d) => (&mut d.weights, &mut d.bias),
                Layer::Conv1d(c) => (&mut c.kernels, &mut c.bias),
                Layer::GlobalAvgPool => continue,
            };
            if idx < w.len() {
                return Some(&mut w[idx]);
            }
            idx -= w.len();
            if idx < b.len() {
                return Some(&mut b[idx]);
            }
            idx -= b.len();
        }
        None
    }
}

/// Preallocated forward/backward buffers for one network and input length.
pub struct Scratch {
    acts: Vec<Feature>,
    zs: Vec<Feature>,
    delta_a: Vec<f64>,
    delta_b: Vec<f64>,
}

impl Scratch {
    pub fn new(net: &Network, input_len: usize) -> Result<Self, NnError> {
        let shapes = net.shapes(input_len)?;
        let acts: Vec<Feature> = shapes
            .iter()
            .map(|&(r, c)| Feature::with_shape(r, c))
            .collect();
        let zs: Vec<Feature> = shapes[1..]
            .iter()
            .map(|&(r, c)| Feature::with_shape(r, c))
            .collect();
        let max = shapes.iter().map(|&(r, c)| r * c).max().unwrap_or(0);
        Ok(Scratch {
            acts,
            zs,
            delta_a: vec![0.0; max],
            delta_b: vec![0.0; max],
        })
    }

    pub fn output(&self) -> &Feature {
        self.acts.last().unwrap()
    }
}

/// Per-layer gradient (or moment) storage matching a network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerGrads {
    fn kernels_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Dense(d) => LayerGrads {
                        weights: vec![0.0; d.weights.len()],
                        bias: vec![0.0; d.bias.len()],
                    },
                    Layer::Conv1d(c) => LayerGrads {
                        weights: vec![0.0; c.kernels.len()],
                        bias: vec![0.0; c.bias.len()],
                    },
                    Layer::GlobalAvgPool => LayerGrads {
                        weights: vec![],
                        bias: vec![],
                    },
                })
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    /// Parameter gradient by flat index, mirroring [`Network::param_mut`].
    pub fn flat(&self, mut idx: usize) -> Option<f64> {
        for l in &self.layers {
            if idx < l.weights.len() {
                return Some(l.weights[idx]);
            }
            idx -= l.weights.len();
            if idx < l.bias.len() {
                return Some(l.bias[idx]);
            }
            idx -= l.bias.len();
        }
        None
    }
}

/// Loss selector for training entry points.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

/// Target for one training sample.
pub enum LossTarget<'a> {
    Mse(&'a [f64]),
    CrossEntropy(usize),
}

/// Mean squared difference of two equal-length vectors.
pub fn mse(x: &[f64], y: &[f64]) -> Result<f64, NnError> {
    if x.len() != y.len() {
        return Err(NnError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.is_empty() {
        return Err(NnError::EmptyInput);
    }
    let acc: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(acc / x.len() as f64)
}

/// Numerically stabilized softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of softmax(logits) against a class index, with the gradient
/// w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>), NnError> {
    if label >= logits.len() {
        return Err(NnError::LabelOutOfRange {
            label,
            n_classes: logits.len(),
        });
    }
    let probs = softmax(logits);
    let loss = -probs[label].max(f64::MIN_POSITIVE).ln();
    let mut grad = probs;
    grad[label] -= 1.0;
    Ok((loss, grad))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in (&mut ca).zip(&mut cb) {
        s0 += x[0] * y[0];
        s1 += x[1] * y[1];
        s2 += x[2] * y[2];
        s3 += x[3] * y[3];
    }
    let mut s = (s0 + s2) + (s1 + s3);
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        s += x * y;
    }
    s
}

#[inline]
pub(crate) fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
