//! A small 1-D convolutional network with hand-written backpropagation.
//!
//! Activations are stored position-major (`[len][channels]`), so a
//! convolution patch is one contiguous run of `kernel * channels` values and
//! flattening before the dense layers is free.
//!
//! Layer lengths use "same" padding for convolutions (`ceil(len / stride)`)
//! and ceil mode for pooling, so a deep stack never shrinks to zero. For the
//! default beat network (input 187, six blocks of stride-2 conv + 2/2 pool):
//!
//! | block | conv out | pool out |
//! |-------|----------|----------|
//! | 1     | 94       | 47       |
//! | 2     | 24       | 12       |
//! | 3     | 6        | 3        |
//! | 4     | 2        | 1        |
//! | 5     | 1        | 1        |
//! | 6     | 1        | 1        |
//!
//! leaving 64 features for the 128 → 32 → 5 dense head.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MODEL_FORMAT: &str = "mywear-conv1d";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input has {got} samples, network expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("loss diverged (non-finite) at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("model file: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Architecture and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_len: usize,
    pub conv_layers: usize,
    pub filters_per_layer: usize,
    pub kernel_size: usize,
    pub conv_stride: usize,
    pub pool_size: usize,
    pub pool_stride: usize,
    /// Number of leading conv blocks followed by a max-pool.
    pub pooled_layers: usize,
    /// Dense layer widths; the last one equals `classes`.
    pub fc_widths: Vec<usize>,
    pub classes: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Inverse-frequency sample weighting of the loss.
    pub class_weighting: bool,
    pub seed: u64,
}

impl Default for NetworkConfig {
    /// The five-class beat network.
    fn default() -> Self {
        Self {
            input_len: 187,
            conv_layers: 6,
            filters_per_layer: 64,
            kernel_size: 5,
            conv_stride: 2,
            pool_size: 2,
            pool_stride: 2,
            pooled_layers: 6,
            fc_widths: vec![128, 32, 5],
            classes: 5,
            learning_rate: 0.001,
            momentum: 0.9,
            batch_size: 64,
            class_weighting: false,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if self.input_len == 0 {
            return bad("input_len must be positive");
        }
        if self.conv_layers == 0 || self.filters_per_layer == 0 || self.kernel_size == 0 {
            return bad("conv layers, filters and kernel must be positive");
        }
        if self.conv_stride == 0 || self.pool_size == 0 || self.pool_stride == 0 {
            return bad("strides and pool size must be positive");
        }
        if self.pooled_layers > self.conv_layers {
            return bad("pooled_layers exceeds conv_layers");
        }
        if self.fc_widths.is_empty() || self.fc_widths.contains(&0) {
            return bad("fc_widths must be non-empty and positive");
        }
        if self.fc_widths.last() != Some(&self.classes) || self.classes < 2 {
            return bad("last fc width must equal classes (>= 2)");
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("learning_rate must be >= 0 and momentum in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub len: usize,
    pub channels: usize,
}

impl Shape {
    pub fn size(self) -> usize {
        self.len * self.channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `[out][k][in]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1d {
    fn out_len(&self, len: usize) -> usize {
        len.div_ceil(self.stride)
    }

    fn pad_left(&self, len: usize) -> isize {
        let out = self.out_len(len);
        let total = ((out - 1) * self.stride + self.kernel).saturating_sub(len);
        (total / 2) as isize
    }

    /// Copies the zero-padded receptive field of output position `t`.
    fn gather(&self, input: &[f64], len: usize, t: usize, patch: &mut [f64]) {
        let c = self.in_channels;
        let start = (t * self.stride) as isize - self.pad_left(len);
        for k in 0..self.kernel {
            let pos = start + k as isize;
            let dst = &mut patch[k * c..(k + 1) * c];
            if pos >= 0 && (pos as usize) < len {
                let p = pos as usize;
                dst.copy_from_slice(&input[p * c..(p + 1) * c]);
            } else {
                dst.fill(0.0);
            }
        }
    }

    fn forward(&self, input: &[f64], len: usize) -> Vec<f64> {
        let out_len = self.out_len(len);
        let width = self.kernel * self.in_channels;
        let mut patch = vec![0.0; width];
        let mut out = vec![0.0; out_len * self.out_channels];
        for t in 0..out_len {
            self.gather(input, len, t, &mut patch);
            let row = &mut out[t * self.out_channels..(t + 1) * self.out_channels];
            for (o, y) in row.iter_mut().enumerate() {
                let w = &self.weight[o * width..(o + 1) * width];
                *y = self.bias[o] + dot(w, &patch);
            }
        }
        out
    }

    fn backward(
        &self,
        input: &[f64],
        len: usize,
        grad_out: &[f64],
        grad_w: &mut [f64],
        grad_b: &mut [f64],
    ) -> Vec<f64> {
        let c = self.in_channels;
        let out_len = self.out_len(len);
        let width = self.kernel * c;
        let pad = self.pad_left(len);
        let mut patch = vec![0.0; width];
        let mut dpatch = vec![0.0; width];
        let mut grad_in = vec![0.0; len * c];
        for t in 0..out_len {
            let g_row = &grad_out[t * self.out_channels..(t + 1) * self.out_channels];
            if g_row.iter().all(|&g| g == 0.0) {
                continue;
            }
            self.gather(input, len, t, &mut patch);
            dpatch.fill(0.0);
            for (o, &g) in g_row.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad_b[o] += g;
                axpy(g, &patch, &mut grad_w[o * width..(o + 1) * width]);
                axpy(g, &self.weight[o * width..(o + 1) * width], &mut dpatch);
            }
            let start = (t * self.stride) as isize - pad;
            for k in 0..self.kernel {
                let pos = start + k as isize;
                if pos >= 0 && (pos as usize) < len {
                    let p = pos as usize;
                    for (d, s) in grad_in[p * c..(p + 1) * c]
                        .iter_mut()
                        .zip(&dpatch[k * c..(k + 1) * c])
                    {
                        *d += s;
                    }
                }
            }
        }
        grad_in
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxPool1d {
    pub size: usize,
    pub stride: usize,
}

impl MaxPool1d {
    fn out_len(&self, len: usize) -> usize {
        len.saturating_sub(self.size).div_ceil(self.stride) + 1
    }

    fn forward(&self, input: &[f64], shape: Shape) -> (Vec<f64>, Vec<u32>) {
        let out_len = self.out_len(shape.len);
        let c = shape.channels;
        let mut out = vec![0.0; out_len * c];
        let mut arg = vec![0u32; out_len * c];
        for i in 0..out_len {
            let lo = i * self.stride;
            let hi = (lo + self.size).min(shape.len);
            for ch in 0..c {
                let mut best = lo;
                for p in lo + 1..hi {
                    if input[p * c + ch] > input[best * c + ch] {
                        best = p;
                    }
                }
                out[i * c + ch] = input[best * c + ch];
                arg[i * c + ch] = (best * c + ch) as u32;
            }
        }
        (out, arg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out][in]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn forward(&self, input: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| self.bias[o] + dot(&self.weight[o * self.inputs..(o + 1) * self.inputs], input))
            .collect()
    }

    fn backward(&self, input: &[f64], grad_out: &[f64], grad_w: &mut [f64], grad_b: &mut [f64]) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.inputs];
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad_b[o] += g;
            axpy(g, input, &mut grad_w[o * self.inputs..(o + 1) * self.inputs]);
            axpy(g, &self.weight[o * self.inputs..(o + 1) * self.inputs], &mut grad_in);
        }
        grad_in
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv1d),
    Relu,
    MaxPool(MaxPool1d),
    Dense(Dense),
}

/// Per-layer values kept from the forward pass for backpropagation.
#[derive(Debug, Clone)]
enum Cache {
    Input(Vec<f64>),
    Output(Vec<f64>),
    Argmax(Vec<u32>),
}

/// Everything `backward` needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    caches: Vec<Cache>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Gradients for every parameter tensor, in [`Network::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            axpy(1.0, b, a);
        }
    }

    fn scale(&mut self, s: f64) {
        for t in &mut self.0 {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    layers: Vec<Layer>,
    /// Input shape of each layer, plus the final output shape.
    shapes: Vec<Shape>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators so the compiler can vectorize
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for j in 0..4 {
            acc[j] += a[4 * i + j] * b[4 * i + j];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

impl Network {
    /// Builds the layer stack with zero parameters.
    pub fn zeros(config: NetworkConfig) -> Result<Self, NnError> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut shapes = Vec::new();
        let mut shape = Shape {
            len: config.input_len,
            channels: 1,
        };
        for i in 0..config.conv_layers {
            let conv = Conv1d {
                in_channels: shape.channels,
                out_channels: config.filters_per_layer,
                kernel: config.kernel_size,
                stride: config.conv_stride,
                weight: vec![0.0; config.filters_per_layer * config.kernel_size * shape.channels],
                bias: vec![0.0; config.filters_per_layer],
            };
            shapes.push(shape);
            shape = Shape {
                len: conv.out_len(shape.len),
                channels: config.filters_per_layer,
            };
            layers.push(Layer::Conv(conv));
            shapes.push(shape);
            layers.push(Layer::Relu);
            if i < config.pooled_layers {
                let pool = MaxPool1d {
                    size: config.pool_size,
                    stride: config.pool_stride,
                };
                shapes.push(shape);
                shape.len = pool.out_len(shape.len);
                layers.push(Layer::MaxPool(pool));
            }
        }
        let mut width = shape.size();
        for (i, &out) in config.fc_widths.iter().enumerate() {
            shapes.push(Shape { len: 1, channels: width });
            layers.push(Layer::Dense(Dense {
                inputs: width,
                outputs: out,
                weight: vec![0.0; out * width],
                bias: vec![0.0; out],
            }));
            width = out;
            if i + 1 < config.fc_widths.len() {
                shapes.push(Shape { len: 1, channels: width });
                layers.push(Layer::Relu);
            }
        }
        shapes.push(Shape { len: 1, channels: width });
        Ok(Self {
            config,
            layers,
            shapes,
        })
    }

    /// He-uniform weights, zero biases, seeded from `config.seed`.
    pub fn new(config: NetworkConfig) -> Result<Self, NnError> {
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(net.config.seed);
        for layer in &mut net.layers {
            let (fan_in, weight) = match layer {
                Layer::Conv(c) => (c.kernel * c.in_channels, &mut c.weight),
                Layer::Dense(d) => (d.inputs, &mut d.weight),
                _ => continue,
            };
            let limit = (6.0 / fan_in as f64).sqrt();
            weight.iter_mut().for_each(|w| *w = rng.gen_range(-limit..limit));
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Input shape of every layer followed by the output shape.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    /// Parameter tensors in a fixed order: for each parametric layer, weight then bias.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push(c.weight.as_slice());
                    out.push(c.bias.as_slice());
                }
                Layer::Dense(d) => {
                    out.push(d.weight.as_slice());
                    out.push(d.bias.as_slice());
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push(&mut c.weight);
                    out.push(&mut c.bias);
                }
                Layer::Dense(d) => {
                    out.push(&mut d.weight);
                    out.push(&mut d.bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn zero_grads(&self) -> Gradients {
        Gradients(self.params().iter().map(|p| vec![0.0; p.len()]).collect())
    }

    fn check_input(&self, input: &[f64]) -> Result<(), NnError> {
        if input.len() != self.config.input_len {
            return Err(NnError::ShapeMismatch {
                expected: self.config.input_len,
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Class probabilities for one input window.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_trace(input)?.probs)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace, NnError> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (layer, shape) in self.layers.iter().zip(&self.shapes) {
            match layer {
                Layer::Conv(c) => {
                    let y = c.forward(&x, shape.len);
                    caches.push(Cache::Input(std::mem::replace(&mut x, y)));
                }
                Layer::Relu => {
                    x.iter_mut().for_each(|v| *v = v.max(0.0));
                    caches.push(Cache::Output(x.clone()));
                }
                Layer::MaxPool(p) => {
                    let (y, arg) = p.forward(&x, *shape);
                    x = y;
                    caches.push(Cache::Argmax(arg));
                }
                Layer::Dense(d) => {
                    let y = d.forward(&x);
                    caches.push(Cache::Input(std::mem::replace(&mut x, y)));
                }
            }
        }
        let probs = softmax(&x);
        Ok(Trace {
            caches,
            logits: x,
            probs,
        })
    }

    /// Backpropagates `grad_logits` through a recorded forward pass.
    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, trace: &Trace, grad_logits: &[f64]) -> (Gradients, Vec<f64>) {
        let mut grads = self.zero_grads();
        let mut slot = grads.0.len();
        let mut g = grad_logits.to_vec();
        for ((layer, shape), cache) in self
            .layers
            .iter()
            .zip(&self.shapes)
            .zip(&trace.caches)
            .rev()
        {
            match (layer, cache) {
                (Layer::Conv(c), Cache::Input(input)) => {
                    slot -= 2;
                    let (w, b) = grads.0.split_at_mut(slot + 1);
                    g = c.backward(input, shape.len, &g, &mut w[slot], &mut b[0]);
                }
                (Layer::Dense(d), Cache::Input(input)) => {
                    slot -= 2;
                    let (w, b) = grads.0.split_at_mut(slot + 1);
                    g = d.backward(input, &g, &mut w[slot], &mut b[0]);
                }
                (Layer::Relu, Cache::Output(out)) => {
                    for (gi, &o) in g.iter_mut().zip(out) {
                        if o <= 0.0 {
                            *gi = 0.0;
                        }
                    }
                }
                (Layer::MaxPool(_), Cache::Argmax(arg)) => {
                    let mut gin = vec![0.0; shape.size()];
                    for (&a, &gv) in arg.iter().zip(&g) {
                        gin[a as usize] += gv;
                    }
                    g = gin;
                }
                _ => unreachable!("cache does not match layer"),
            }
        }
        (grads, g)
    }

    /// Weighted cross-entropy loss and parameter gradients for one example.
    pub fn loss_and_gradients(&self, input: &[f64], label: usize, weight: f64) -> Result<(f64, Gradients, Trace), NnError> {
        if label >= self.config.classes {
            return Err(NnError::LabelOutOfRange {
                label,
                classes: self.config.classes,
            });
        }
        let trace = self.forward_trace(input)?;
        let loss = -weight * trace.probs[label].max(f64::MIN_POSITIVE).ln();
        let mut dlogits: Vec<f64> = trace.probs.iter().map(|p| weight * p).collect();
        dlogits[label] -= weight;
        let (grads, _) = self.backward(&trace, &dlogits);
        Ok((loss, grads, trace))
    }

    pub fn predict(&self, input: &[f64]) -> Result<(usize, f64), NnError> {
        let probs = self.forward(input)?;
        let k = argmax(&probs);
        Ok((k, probs[k]))
    }

    pub fn to_model_file(&self) -> ModelFile {
        ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            config: self.config.clone(),
            parameters: self
                .params()
                .into_iter()
                .enumerate()
                .map(|(i, p)| ParamArray {
                    name: self.param_name(i),
                    values: p.to_vec(),
                })
                .collect(),
        }
    }

    fn param_name(&self, index: usize) -> String {
        let mut n = 0;
        for (li, layer) in self.layers.iter().enumerate() {
            if matches!(layer, Layer::Conv(_) | Layer::Dense(_)) {
                if n == index / 2 {
                    let kind = if matches!(layer, Layer::Conv(_)) { "conv" } else { "dense" };
                    let part = if index % 2 == 0 { "weight" } else { "bias" };
                    return format!("{li}.{kind}.{part}");
                }
                n += 1;
            }
        }
        unreachable!("parameter index out of range")
    }

    pub fn from_model_file(file: ModelFile) -> Result<Self, NnError> {
        if file.format != MODEL_FORMAT {
            return Err(NnError::ModelFile(format!("unknown format {:?}", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(NnError::ModelFile(format!("unsupported version {}", file.version)));
        }
        let mut net = Self::zeros(file.config)?;
        let mut slots = net.params_mut();
        if slots.len() != file.parameters.len() {
            return Err(NnError::ModelFile(format!(
                "expected {} parameter arrays, found {}",
                slots.len(),
                file.parameters.len()
            )));
        }
        for (slot, arr) in slots.iter_mut().zip(file.parameters) {
            if slot.len() != arr.values.len() {
                return Err(NnError::ModelFile(format!(
                    "{}: expected {} values, found {}",
                    arr.name,
                    slot.len(),
                    arr.values.len()
                )));
            }
            **slot = arr.values;
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let json = serde_json::to_vec(&self.to_model_file())?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let bytes = std::fs::read(path)?;
        Self::from_model_file(serde_json::from_slice(&bytes)?)
    }
}

/// On-disk model container.
///
/// ```json
/// { "format": "mywear-conv1d", "version": 1,
///   "config": { ...NetworkConfig... },
///   "parameters": [ { "name": "0.conv.weight", "values": [...] }, ... ] }
/// ```
/// Conv weights are `[out][k][in]`, dense weights `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub config: NetworkConfig,
    pub parameters: Vec<ParamArray>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamArray {
    pub name: String,
    pub values: Vec<f64>,
}

/// Per-epoch training trajectory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub loss: Vec<f64>,
    pub accuracy: Vec<f64>,
}

/// Momentum SGD: `v = momentum * v + g; w -= lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    velocity: Gradients,
}

impl Sgd {
    pub fn new(net: &Network) -> Self {
        Self {
            velocity: net.zero_grads(),
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients) {
        let lr = net.config.learning_rate;
        let mu = net.config.momentum;
        for ((param, vel), g) in net.params_mut().into_iter().zip(&mut self.velocity.0).zip(&grads.0) {
            for ((w, v), gi) in param.iter_mut().zip(vel.iter_mut()).zip(g) {
                *v = mu * *v + gi;
                *w -= lr * *v;
            }
        }
    }
}

/// Inverse-frequency weights `n / (k * n_c)`; classes absent from the set get 0.
pub fn class_weights(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count().max(1);
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                labels.len() as f64 / (present as f64 * c as f64)
            }
        })
        .collect()
}

/// Mini-batch training with seeded shuffling.
///
/// Batch gradients are the weighted mean over the batch, accumulated in
/// sample order so runs are bit-reproducible under a fixed seed.
pub fn fit(
    net: &mut Network,
    inputs: &[Vec<f64>],
    labels: &[usize],
    epochs: usize,
    batch_size: usize,
) -> Result<TrainHistory, NnError> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(NnError::EmptyTrainingSet);
    }
    let classes = net.config.classes;
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(NnError::LabelOutOfRange { label, classes });
    }
    for x in inputs {
        net.check_input(x)?;
    }
    let weights = if net.config.class_weighting {
        class_weights(labels, classes)
    } else {
        vec![1.0; classes]
    };
    let batch_size = batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(net.config.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut sgd = Sgd::new(net);
    let mut history = TrainHistory::default();

    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        let mut total_weight = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(batch_size) {
            let mut acc = net.zero_grads();
            let mut batch_weight = 0.0;
            for &i in batch {
                let w = weights[labels[i]];
                let (loss, g, trace) = net.loss_and_gradients(&inputs[i], labels[i], w)?;
                acc.add_assign(&g);
                total_loss += loss;
                batch_weight += w;
                if argmax(&trace.probs) == labels[i] {
                    correct += 1;
                }
            }
            total_weight += batch_weight;
            if batch_weight > 0.0 {
                acc.scale(1.0 / batch_weight);
                sgd.step(net, &acc);
            }
        }
        let loss = total_loss / total_weight.max(f64::MIN_POSITIVE);
        if !loss.is_finite() {
            return Err(NnError::DivergedLoss { epoch });
        }
        history.loss.push(loss);
        history.accuracy.push(100.0 * correct as f64 / inputs.len() as f64);
    }
    Ok(history)
}
