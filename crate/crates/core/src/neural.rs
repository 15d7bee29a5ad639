//! A small fully connected classifier with hand-written backpropagation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::LogitVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation and activated value.
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dims,
            num_classes,
            activation: Activation::Relu,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::TooFewClasses(self.num_classes));
        }
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be at least 1".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for each layer in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend(&self.hidden_dims);
        dims.push(self.num_classes);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| (i + 1) * o).sum()
    }
}

/// Dense affine layer; `weights` is row-major with one row per output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.bias).map(|(row, b)| {
            b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>()
        }));
    }

    fn same_shape(&self, other: &Layer) -> bool {
        self.inputs == other.inputs && self.outputs == other.outputs
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Parameter-shaped buffers: gradients or momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBuffers {
    pub layers: Vec<Layer>,
}

impl ParamBuffers {
    pub fn zeros_like(model: &Mlp) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        self.layers.iter_mut().flat_map(Layer::params_mut).for_each(|x| *x = 0.0);
    }

    pub fn scale(&mut self, factor: f64) {
        self.layers.iter_mut().flat_map(Layer::params_mut).for_each(|x| *x *= factor);
    }

    /// `self += other`.
    pub fn add(&mut self, other: &ParamBuffers) -> Result<()> {
        self.check_shape(other)?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.params_mut().zip(b.params()) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Layer::params)
    }

    fn check_shape(&self, other: &ParamBuffers) -> Result<()> {
        if self.layers.len() != other.layers.len()
            || self.layers.iter().zip(&other.layers).any(|(a, b)| !a.same_shape(b))
        {
            return Err(Error::DimensionMismatch(self.len(), other.len()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpParts")]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpParts {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

impl TryFrom<MlpParts> for Mlp {
    type Error = Error;

    fn try_from(parts: MlpParts) -> Result<Self> {
        Mlp::from_layers(parts.spec, parts.layers)
    }
}

/// Intermediate values kept from a forward pass for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    /// `activations[0]` is the input; the last entry holds the logits.
    activations: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut layer = Layer::zeros(fan_in, fan_out);
                layer
                    .weights
                    .iter_mut()
                    .for_each(|w| *w = rng.random_range(-limit..limit));
                layer
            })
            .collect();
        Ok(Self { spec, layers })
    }

    /// Assembles a model from explicit layers, checking that shapes chain.
    pub fn from_layers(spec: MlpSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::DimensionMismatch(shapes.len(), layers.len()));
        }
        for ((fan_in, fan_out), layer) in shapes.iter().zip(&layers) {
            if layer.inputs != *fan_in
                || layer.outputs != *fan_out
                || layer.weights.len() != fan_in * fan_out
                || layer.bias.len() != *fan_out
            {
                return Err(Error::DimensionMismatch(fan_in * fan_out, layer.weights.len()));
            }
            if layer.params().any(|x| !x.is_finite()) {
                return Err(Error::InvalidConfig("non-finite weight".into()));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn forward(&self, input: &[f64]) -> Result<LogitVector> {
        self.check_input(input)?;
        let mut trace = Trace::default();
        self.forward_trace(input, &mut trace);
        LogitVector::new(trace.activations.pop().unwrap_or_default())
    }

    /// Raw logits without wrapping, for hot loops over validated data.
    pub fn logits(&self, input: &[f64]) -> Vec<f64> {
        let mut trace = Trace::default();
        self.forward_trace(input, &mut trace);
        trace.activations.pop().unwrap_or_default()
    }

    /// Forward pass recording everything [`Mlp::backward_trace`] needs.
    /// Buffers in `trace` are reused between calls.
    pub fn forward_trace(&self, input: &[f64], trace: &mut Trace) {
        let depth = self.layers.len();
        trace.activations.resize_with(depth + 1, Vec::new);
        trace.pre_activations.resize_with(depth, Vec::new);
        trace.activations[0].clear();
        trace.activations[0].extend_from_slice(input);
        for (i, layer) in self.layers.iter().enumerate() {
            let (done, rest) = trace.activations.split_at_mut(i + 1);
            let pre = &mut trace.pre_activations[i];
            layer.affine(&done[i], pre);
            let out = &mut rest[0];
            out.clear();
            if i + 1 == depth {
                out.extend_from_slice(pre);
            } else {
                out.extend(pre.iter().map(|&z| self.spec.activation.apply(z)));
            }
        }
    }

    /// Gradients of `logit_grad · logits(input)` with respect to every parameter.
    pub fn backward(&self, input: &[f64], logit_grad: &[f64]) -> Result<ParamBuffers> {
        self.check_input(input)?;
        if logit_grad.len() != self.spec.num_classes {
            return Err(Error::DimensionMismatch(self.spec.num_classes, logit_grad.len()));
        }
        let mut trace = Trace::default();
        self.forward_trace(input, &mut trace);
        let mut grads = ParamBuffers::zeros_like(self);
        self.backward_trace(&trace, logit_grad, &mut grads);
        Ok(grads)
    }

    /// Accumulates (adds) parameter gradients into `grads`.
    pub fn backward_trace(&self, trace: &Trace, logit_grad: &[f64], grads: &mut ParamBuffers) {
        let mut delta = logit_grad.to_vec();
        let mut next = Vec::new();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &trace.activations[i];
            let g = &mut grads.layers[i];
            for ((row, b), d) in g.weights.chunks_exact_mut(layer.inputs).zip(&mut g.bias).zip(&delta) {
                *b += d;
                if *d != 0.0 {
                    row.iter_mut().zip(input).for_each(|(w, x)| *w += d * x);
                }
            }
            if i == 0 {
                break;
            }
            next.clear();
            next.resize(layer.inputs, 0.0);
            for (row, d) in layer.weights.chunks_exact(layer.inputs).zip(&delta) {
                if *d != 0.0 {
                    next.iter_mut().zip(row).for_each(|(n, w)| *n += d * w);
                }
            }
            let pre = &trace.pre_activations[i - 1];
            for ((n, &z), &a) in next.iter_mut().zip(pre).zip(input) {
                *n *= self.spec.activation.derivative(z, a);
            }
            std::mem::swap(&mut delta, &mut next);
        }
    }

    pub fn predict(&self, input: &[f64]) -> usize {
        crate::divergence::kernel::argmax(&self.logits(input))
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch(self.spec.input_dim, input.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 40,
            batch_size: 64,
            lr_decay_epochs: vec![25, 32],
            lr_decay_factor: 0.1,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0,1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad(format!("lr_decay_factor must be in (0,1], got {}", self.lr_decay_factor));
        }
        if self.lr_decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return bad("lr_decay_epochs must be strictly increasing".into());
        }
        if let Some(&e) = self
            .lr_decay_epochs
            .iter()
            .find(|&&e| e < 1 || e > self.epochs)
        {
            return bad(format!("decay epoch {e} outside [1, {}]", self.epochs));
        }
        Ok(())
    }
}

/// Step-decayed learning rate for a zero-based epoch index.
pub fn lr_at_epoch(config: &SgdConfig, epoch: usize) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(Error::Domain(format!(
            "epoch {epoch} outside [0, {})",
            config.epochs
        )));
    }
    let decays = config.lr_decay_epochs.iter().filter(|&&m| m <= epoch).count();
    Ok(config.learning_rate * config.lr_decay_factor.powi(decays as i32))
}

/// Heavy-ball step with coupled weight decay:
/// `v ← μv + g + wd·w`, then `w ← w − lr·v`.
pub fn sgd_step(
    model: &mut Mlp,
    grads: &ParamBuffers,
    velocity: &mut ParamBuffers,
    config: &SgdConfig,
    current_lr: f64,
) -> Result<()> {
    let shape = ParamBuffers::zeros_like(model);
    shape.check_shape(grads)?;
    shape.check_shape(velocity)?;
    for ((layer, g), v) in model.layers.iter_mut().zip(&grads.layers).zip(&mut velocity.layers) {
        for ((w, gi), vi) in layer.params_mut().zip(g.params()).zip(v.params_mut()) {
            *vi = config.momentum * *vi + gi + config.weight_decay * *w;
            *w -= current_lr * *vi;
        }
    }
    Ok(())
}
