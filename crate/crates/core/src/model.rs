//! Small feed-forward / residual classifiers with hand-written reverse mode.
//!
//! A model is an ordered list of layers ending in logits; the cross-entropy
//! head is applied by [`loss_ce`] and friends rather than stored as a layer.
//! Backpropagation caches every layer input on the forward pass and walks
//! the list in reverse, producing both the input gradient and the parameter
//! gradients in checkpoint order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Linear,
    Relu,
    Softplus,
    ResidualBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Softplus,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Softplus => softplus(z),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(z),
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
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

/// Architecture entry, without parameters.
///
/// `activation` is only meaningful for residual blocks and defaults to ReLU.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
}

impl LayerSpec {
    pub fn linear(in_dim: usize, out_dim: usize) -> Self {
        Self {
            kind: LayerKind::Linear,
            in_dim,
            out_dim,
            activation: None,
        }
    }

    pub fn relu(dim: usize) -> Self {
        Self {
            kind: LayerKind::Relu,
            in_dim: dim,
            out_dim: dim,
            activation: None,
        }
    }

    pub fn softplus(dim: usize) -> Self {
        Self {
            kind: LayerKind::Softplus,
            in_dim: dim,
            out_dim: dim,
            activation: None,
        }
    }

    pub fn residual(dim: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::ResidualBlock,
            in_dim: dim,
            out_dim: dim,
            activation: Some(activation),
        }
    }

    /// Number of scalar parameters this layer owns.
    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Linear => self.in_dim * self.out_dim + self.out_dim,
            LayerKind::Relu | LayerKind::Softplus => 0,
            LayerKind::ResidualBlock => 2 * (self.in_dim * self.in_dim + self.in_dim),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::arg("layer dimensions must be positive"));
        }
        if self.kind != LayerKind::Linear && self.in_dim != self.out_dim {
            return Err(Error::arg(format!(
                "{:?} layer must preserve its dimension ({} -> {})",
                self.kind, self.in_dim, self.out_dim
            )));
        }
        if self.activation.is_some() && self.kind != LayerKind::ResidualBlock {
            return Err(Error::arg("only residual blocks carry an activation"));
        }
        Ok(())
    }
}

/// Builds `linear -> act -> ... -> linear` with optional residual blocks
/// inserted after the first hidden layer.
pub fn mlp_spec(
    input_dim: usize,
    hidden: &[usize],
    n_classes: usize,
    activation: Activation,
    residual_blocks: usize,
) -> Vec<LayerSpec> {
    let mut spec = Vec::new();
    let mut dim = input_dim;
    for (i, &width) in hidden.iter().enumerate() {
        spec.push(LayerSpec::linear(dim, width));
        spec.push(match activation {
            Activation::Relu => LayerSpec::relu(width),
            Activation::Softplus => LayerSpec::softplus(width),
        });
        if i == 0 {
            for _ in 0..residual_blocks {
                spec.push(LayerSpec::residual(width, activation));
            }
        }
        dim = width;
    }
    spec.push(LayerSpec::linear(dim, n_classes));
    spec
}

/// Fully connected map `W x + b`, `W` row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut d = Self::zeros(in_dim, out_dim);
        for w in d.weight.iter_mut().chain(d.bias.iter_mut()) {
            *w = rng.gen_range(-bound..=bound);
        }
        d
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|o| {
                let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[o]
            })
            .collect()
    }

    /// Returns `Wᵀ g`; accumulates `g xᵀ` and `g` into the parameter grads.
    fn backward(&self, x: &[f64], g: &[f64], grads: Option<(&mut [f64], &mut [f64])>) -> Vec<f64> {
        let mut gx = vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for (acc, w) in gx.iter_mut().zip(row) {
                *acc += w * g[o];
            }
        }
        if let Some((gw, gb)) = grads {
            for o in 0..self.out_dim {
                for i in 0..self.in_dim {
                    gw[o * self.in_dim + i] += g[o] * x[i];
                }
                gb[o] += g[o];
            }
        }
        gx
    }
}

/// A layer with materialized parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear(Dense),
    Relu(usize),
    Softplus(usize),
    /// `x + act(W₂·act(W₁x + b₁) + b₂)`
    Residual {
        first: Dense,
        second: Dense,
        activation: Activation,
    },
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Linear(d) => LayerSpec::linear(d.in_dim, d.out_dim),
            Layer::Relu(n) => LayerSpec::relu(*n),
            Layer::Softplus(n) => LayerSpec::softplus(*n),
            Layer::Residual {
                first, activation, ..
            } => LayerSpec::residual(first.in_dim, *activation),
        }
    }

    fn from_spec_zeroed(spec: &LayerSpec) -> Self {
        match spec.kind {
            LayerKind::Linear => Layer::Linear(Dense::zeros(spec.in_dim, spec.out_dim)),
            LayerKind::Relu => Layer::Relu(spec.in_dim),
            LayerKind::Softplus => Layer::Softplus(spec.in_dim),
            LayerKind::ResidualBlock => Layer::Residual {
                first: Dense::zeros(spec.in_dim, spec.in_dim),
                second: Dense::zeros(spec.in_dim, spec.in_dim),
                activation: spec.activation.unwrap_or(Activation::Relu),
            },
        }
    }

    /// Parameter slices in checkpoint order: every weight matrix of the layer
    /// first, then every bias vector.
    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Linear(d) => vec![&d.weight, &d.bias],
            Layer::Relu(_) | Layer::Softplus(_) => vec![],
            Layer::Residual { first, second, .. } => {
                vec![&first.weight, &second.weight, &first.bias, &second.bias]
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Linear(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Relu(_) | Layer::Softplus(_) => vec![],
            Layer::Residual { first, second, .. } => vec![
                &mut first.weight,
                &mut second.weight,
                &mut first.bias,
                &mut second.bias,
            ],
        }
    }
}

/// Per-layer forward record used by the backward pass.
enum Cache {
    Plain(Vec<f64>),
    Residual {
        input: Vec<f64>,
        pre1: Vec<f64>,
        hidden: Vec<f64>,
        pre2: Vec<f64>,
    },
}

/// Parameter gradient of one layer, flattened in checkpoint order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad_input: Vec<f64>,
    pub grad_params: Vec<ParamGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
}

impl Model {
    /// Validates the architecture; parameters are zeroed.
    pub fn zeroed(spec: &[LayerSpec]) -> Result<Self> {
        validate_spec(spec)?;
        Ok(Self {
            layers: spec.iter().map(Layer::from_spec_zeroed).collect(),
        })
    }

    /// Uniform `[-1/√fan_in, 1/√fan_in]` initialization drawn from `seed`.
    pub fn init(spec: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_spec(spec)?;
        let mut rng = rng::substream(seed, &[rng::INIT]);
        let layers = spec
            .iter()
            .map(|s| match s.kind {
                LayerKind::Linear => Layer::Linear(Dense::init(s.in_dim, s.out_dim, &mut rng)),
                LayerKind::Relu => Layer::Relu(s.in_dim),
                LayerKind::Softplus => Layer::Softplus(s.in_dim),
                LayerKind::ResidualBlock => Layer::Residual {
                    first: Dense::init(s.in_dim, s.in_dim, &mut rng),
                    second: Dense::init(s.in_dim, s.in_dim, &mut rng),
                    activation: s.activation.unwrap_or(Activation::Relu),
                },
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let spec: Vec<LayerSpec> = layers.iter().map(Layer::spec).collect();
        validate_spec(&spec)?;
        for layer in &layers {
            for p in layer.params() {
                if p.iter().any(|v| !v.is_finite()) {
                    return Err(Error::arg("non-finite parameter"));
                }
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn spec(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec().in_dim
    }

    pub fn n_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].spec().out_dim
    }

    pub fn param_count(&self) -> usize {
        self.spec().iter().map(LayerSpec::param_count).sum()
    }

    /// True when the network is built only from linear maps, ReLU and
    /// ReLU residual blocks.
    pub fn is_relu_network(&self) -> bool {
        self.layers.iter().all(|l| match l {
            Layer::Linear(_) | Layer::Relu(_) => true,
            Layer::Softplus(_) => false,
            Layer::Residual { activation, .. } => *activation == Activation::Relu,
        })
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_class(&self, y: usize) -> Result<()> {
        if y >= self.n_classes() {
            return Err(Error::ClassIndex {
                index: y,
                n_classes: self.n_classes(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.logits(x))
    }

    pub(crate) fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x, false).0
    }

    fn forward_cached(&self, x: &[f64], keep: bool) -> (Vec<f64>, Vec<Cache>) {
        let mut caches = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        let mut h = x.to_vec();
        for layer in &self.layers {
            let (out, cache) = match layer {
                Layer::Linear(d) => (d.apply(&h), None),
                Layer::Relu(_) => (h.iter().map(|&z| Activation::Relu.apply(z)).collect(), None),
                Layer::Softplus(_) => (h.iter().map(|&z| softplus(z)).collect(), None),
                Layer::Residual {
                    first,
                    second,
                    activation,
                } => {
                    let pre1 = first.apply(&h);
                    let hidden: Vec<f64> = pre1.iter().map(|&z| activation.apply(z)).collect();
                    let pre2 = second.apply(&hidden);
                    let out = h
                        .iter()
                        .zip(&pre2)
                        .map(|(a, z)| a + activation.apply(*z))
                        .collect();
                    let cache = keep.then(|| Cache::Residual {
                        input: h.clone(),
                        pre1,
                        hidden,
                        pre2,
                    });
                    (out, cache)
                }
            };
            if keep {
                caches.push(cache.unwrap_or_else(|| Cache::Plain(h.clone())));
            }
            h = out;
        }
        (h, caches)
    }

    /// Reverse pass from `dL/dlogits`. Parameter grads are only built when
    /// `with_params` is set.
    fn backward(
        &self,
        caches: &[Cache],
        mut g: Vec<f64>,
        with_params: bool,
    ) -> (Vec<f64>, Vec<ParamGrad>) {
        let mut pgrads: Vec<ParamGrad> = if with_params {
            self.layers
                .iter()
                .map(|l| ParamGrad(vec![0.0; l.spec().param_count()]))
                .collect()
        } else {
            Vec::new()
        };
        for (idx, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            g = match (layer, cache) {
                (Layer::Linear(d), Cache::Plain(input)) => {
                    let slot = pgrads
                        .get_mut(idx)
                        .map(|ParamGrad(buf)| buf.split_at_mut(d.in_dim * d.out_dim));
                    d.backward(input, &g, slot)
                }
                (Layer::Relu(_), Cache::Plain(input)) => input
                    .iter()
                    .zip(&g)
                    .map(|(z, gv)| Activation::Relu.derivative(*z) * gv)
                    .collect(),
                (Layer::Softplus(_), Cache::Plain(input)) => input
                    .iter()
                    .zip(&g)
                    .map(|(z, gv)| sigmoid(*z) * gv)
                    .collect(),
                (
                    Layer::Residual {
                        first,
                        second,
                        activation,
                    },
                    Cache::Residual {
                        input,
                        pre1,
                        hidden,
                        pre2,
                    },
                ) => {
                    let g_pre2: Vec<f64> = pre2
                        .iter()
                        .zip(&g)
                        .map(|(z, gv)| activation.derivative(*z) * gv)
                        .collect();
                    let n = first.in_dim;
                    // layout: W1, W2, b1, b2
                    let (slot1, slot2) = match pgrads.get_mut(idx) {
                        Some(ParamGrad(buf)) => {
                            let (w1, rest) = buf.split_at_mut(n * n);
                            let (w2, rest) = rest.split_at_mut(n * n);
                            let (b1, b2) = rest.split_at_mut(n);
                            (Some((w1, b1)), Some((w2, b2)))
                        }
                        None => (None, None),
                    };
                    let g_hidden = second.backward(hidden, &g_pre2, slot2);
                    let g_pre1: Vec<f64> = pre1
                        .iter()
                        .zip(&g_hidden)
                        .map(|(z, gv)| activation.derivative(*z) * gv)
                        .collect();
                    let g_input_branch = first.backward(input, &g_pre1, slot1);
                    g.iter().zip(&g_input_branch).map(|(a, b)| a + b).collect()
                }
                _ => unreachable!("cache kind always matches its layer"),
            };
        }
        (g, pgrads)
    }

    pub fn loss_and_grad(&self, x: &[f64], y: usize) -> Result<LossGrad> {
        self.check_input(x)?;
        self.check_class(y)?;
        Ok(self.loss_grad_full(x, y, true))
    }

    pub(crate) fn loss_grad_full(&self, x: &[f64], y: usize, with_params: bool) -> LossGrad {
        let (logits, caches) = self.forward_cached(x, true);
        let (value, dlogits) = ce_with_grad(&logits, y);
        let (grad_input, grad_params) = self.backward(&caches, dlogits, with_params);
        LossGrad {
            value,
            grad_input,
            grad_params,
        }
    }

    pub fn log_prob_of_class(&self, x: &[f64], y: usize) -> Result<f64> {
        self.check_input(x)?;
        self.check_class(y)?;
        Ok(-loss_ce(&self.logits(x), y)?)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(crate::tensor::argmax(&self.forward(x)?))
    }

    /// On/off state of every ReLU unit, in evaluation order. Empty for
    /// smooth networks.
    pub fn relu_pattern(&self, x: &[f64]) -> Vec<bool> {
        let mut pattern = Vec::new();
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = match layer {
                Layer::Linear(d) => d.apply(&h),
                Layer::Relu(_) => {
                    pattern.extend(h.iter().map(|z| *z > 0.0));
                    h.iter().map(|&z| Activation::Relu.apply(z)).collect()
                }
                Layer::Softplus(_) => h.iter().map(|&z| softplus(z)).collect(),
                Layer::Residual {
                    first,
                    second,
                    activation,
                } => {
                    let pre1 = first.apply(&h);
                    let is_relu = *activation == Activation::Relu;
                    if is_relu {
                        pattern.extend(pre1.iter().map(|z| *z > 0.0));
                    }
                    let hidden: Vec<f64> = pre1.iter().map(|&z| activation.apply(z)).collect();
                    let pre2 = second.apply(&hidden);
                    if is_relu {
                        pattern.extend(pre2.iter().map(|z| *z > 0.0));
                    }
                    h.iter()
                        .zip(&pre2)
                        .map(|(a, z)| a + activation.apply(*z))
                        .collect()
                }
            };
        }
        pattern
    }
}

fn validate_spec(spec: &[LayerSpec]) -> Result<()> {
    if spec.is_empty() {
        return Err(Error::arg("model needs at least one layer"));
    }
    for s in spec {
        s.validate()?;
    }
    for pair in spec.windows(2) {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(Error::Dimension {
                expected: pair[0].out_dim,
                got: pair[1].in_dim,
            });
        }
    }
    Ok(())
}

/// `(loss, log-sum-exp)` pieces shared by the loss and its gradient.
fn ce_parts(logits: &[f64], y: usize) -> (f64, f64, f64) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logits.iter().map(|z| (z - m).exp()).sum();
    // (m - z_y) >= 0 and ln(s) >= 0, so the loss is never negative
    ((m - logits[y]) + s.ln(), m, s)
}

/// `-log softmax(logits)[y]`, computed with max subtraction.
pub fn loss_ce(logits: &[f64], y: usize) -> Result<f64> {
    if y >= logits.len() {
        return Err(Error::ClassIndex {
            index: y,
            n_classes: logits.len(),
        });
    }
    Ok(ce_parts(logits, y).0)
}

pub fn log_softmax_at(logits: &[f64], y: usize) -> Result<f64> {
    Ok(-loss_ce(logits, y)?)
}

fn ce_with_grad(logits: &[f64], y: usize) -> (f64, Vec<f64>) {
    let (loss, m, s) = ce_parts(logits, y);
    let mut g: Vec<f64> = logits.iter().map(|z| (z - m).exp() / s).collect();
    g[y] -= 1.0;
    (loss, g)
}
