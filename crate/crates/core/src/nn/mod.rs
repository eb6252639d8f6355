//! Dense feedforward networks with manual backpropagation.
//!
//! Layer `l` (1-based, `1..=t`) maps `N_{l-1}` inputs to `N_l` outputs with a
//! weight matrix of shape `N_l × N_{l-1}` and one bias per output neuron.
//! Every hidden layer standardizes its pre-activations, `(z - μ) / σ`, before
//! the activation function. The output layer is affine and feeds the loss.

mod backward;
mod forward;
mod standardizer;

pub use backward::Gradients;
pub use forward::ActivationCache;
pub use standardizer::{Standardizer, StandardizerMode, EPSILON_STD};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IstError, Result};
use crate::linalg::Matrix;
use crate::rng::rng_from_seed;

/// Layer widths `[N_0, N_1, ..., N_t]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelDims(Vec<usize>);

impl ModelDims {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 3 {
            return Err(IstError::Config(format!(
                "need at least one hidden layer, got widths {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(IstError::Config(format!("zero width in {widths:?}")));
        }
        Ok(Self(widths))
    }

    pub fn widths(&self) -> &[usize] {
        &self.0
    }

    /// Number of weight layers `t`.
    pub fn depth(&self) -> usize {
        self.0.len() - 1
    }

    pub fn width(&self, l: usize) -> usize {
        self.0[l]
    }

    pub fn input(&self) -> usize {
        self.0[0]
    }

    pub fn output(&self) -> usize {
        self.0[self.0.len() - 1]
    }

    /// Hidden layer indices `1..t`.
    pub fn hidden_layers(&self) -> std::ops::Range<usize> {
        1..self.depth()
    }

    /// `Σ_l N_{l-1} N_l`.
    pub fn weight_count(&self) -> u64 {
        self.0.windows(2).map(|w| (w[0] * w[1]) as u64).sum()
    }

    /// `Σ_{l≥1} N_l`.
    pub fn bias_count(&self) -> u64 {
        self.0[1..].iter().map(|&n| n as u64).sum()
    }

    pub fn param_count(&self) -> u64 {
        self.weight_count() + self.bias_count()
    }
}

impl std::fmt::Display for ModelDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        write!(f, "{}", parts.join(","))
    }
}

impl std::str::FromStr for ModelDims {
    type Err = IstError;

    fn from_str(s: &str) -> Result<Self> {
        let widths = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|e| IstError::Config(format!("bad width `{p}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(widths)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    #[default]
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl ActivationKind {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            ActivationKind::Identity => x,
        }
    }

    /// Derivative at input `x` given output `y = apply(x)`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Tanh => 1.0 - y * y,
            ActivationKind::Sigmoid => y * (1.0 - y),
            ActivationKind::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for ActivationKind {
    type Err = IstError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "sigmoid" => Ok(Self::Sigmoid),
            "identity" => Ok(Self::Identity),
            other => Err(IstError::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Softmax cross-entropy against class labels.
    #[default]
    CrossEntropy,
    /// `½‖y − t‖²` averaged over the batch.
    Mse,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Matrix),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One weight layer. `weights` is `N_l × N_{l-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    dims: ModelDims,
    layers: Vec<Layer>,
    activation: ActivationKind,
    standardizers: Vec<Standardizer>,
}

impl Model {
    /// Uniform Glorot init (He for ReLU), zero biases, batch-stat standardizers.
    pub fn init(dims: ModelDims, activation: ActivationKind, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let layers = dims
            .widths()
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = match activation {
                    ActivationKind::Relu => (6.0 / fan_in as f64).sqrt(),
                    _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                };
                let weights = Matrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-limit..limit));
                Layer {
                    weights,
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Self::with_layers(dims, layers, activation)
    }

    pub fn zeros(dims: ModelDims, activation: ActivationKind) -> Self {
        let layers = dims
            .widths()
            .windows(2)
            .map(|w| Layer {
                weights: Matrix::zeros(w[1], w[0]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Self::with_layers(dims, layers, activation)
    }

    fn with_layers(dims: ModelDims, layers: Vec<Layer>, activation: ActivationKind) -> Self {
        let standardizers = dims
            .hidden_layers()
            .map(|l| Standardizer::batch_stats(dims.width(l)))
            .collect();
        Self {
            dims,
            layers,
            activation,
            standardizers,
        }
    }

    /// Build from explicit layers; standardizers start in batch-stats mode.
    pub fn from_layers(layers: Vec<Layer>, activation: ActivationKind) -> Result<Self> {
        let mut widths = Vec::with_capacity(layers.len() + 1);
        if let Some(first) = layers.first() {
            widths.push(first.weights.cols());
        }
        for (k, layer) in layers.iter().enumerate() {
            let expected_in = widths[k];
            if layer.weights.cols() != expected_in {
                return Err(IstError::Dimension(format!(
                    "layer {} takes {} inputs, previous layer has {expected_in} outputs",
                    k + 1,
                    layer.weights.cols()
                )));
            }
            if layer.bias.len() != layer.weights.rows() {
                return Err(IstError::Dimension(format!(
                    "layer {} has {} rows but {} biases",
                    k + 1,
                    layer.weights.rows(),
                    layer.bias.len()
                )));
            }
            if !layer.weights.all_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(IstError::Dimension(format!("layer {} not finite", k + 1)));
            }
            widths.push(layer.weights.rows());
        }
        let dims = ModelDims::new(widths)?;
        Ok(Self::with_layers(dims, layers, activation))
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn activation(&self) -> ActivationKind {
        self.activation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Weight layer `l` in `1..=t`.
    pub fn layer(&self, l: usize) -> &Layer {
        &self.layers[l - 1]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut Layer {
        &mut self.layers[l - 1]
    }

    pub fn standardizers(&self) -> &[Standardizer] {
        &self.standardizers
    }

    /// Standardizer of hidden layer `l` in `1..t`.
    pub fn standardizer(&self, l: usize) -> &Standardizer {
        &self.standardizers[l - 1]
    }

    pub fn set_standardizer(&mut self, l: usize, s: Standardizer) -> Result<()> {
        if s.len() != self.dims.width(l) {
            return Err(IstError::Dimension(format!(
                "standardizer of width {} for layer {l} of width {}",
                s.len(),
                self.dims.width(l)
            )));
        }
        self.standardizers[l - 1] = s;
        Ok(())
    }

    pub fn is_frozen(&self) -> bool {
        self.standardizers
            .iter()
            .all(|s| s.mode == StandardizerMode::Frozen)
    }

    /// Put every standardizer back into per-batch statistics mode.
    pub fn use_batch_stats(&mut self) {
        for s in &mut self.standardizers {
            s.mode = StandardizerMode::BatchStats;
        }
    }

    /// Compute per-neuron μ, σ of every hidden pre-activation over
    /// `calibration` using the full network, then freeze them.
    pub fn calibrate_standardizers(&mut self, calibration: &Matrix) -> Result<()> {
        if calibration.rows() == 0 {
            return Err(IstError::Empty("calibration batch".into()));
        }
        let mut probe = self.clone();
        probe.use_batch_stats();
        let cache = probe.forward(calibration)?;
        for (s, stats) in self.standardizers.iter_mut().zip(cache.stats()) {
            s.mean.clone_from(&stats.mean);
            s.std.clone_from(&stats.std);
            s.mode = StandardizerMode::Frozen;
        }
        Ok(())
    }

    /// `w ← w − η·g` on every weight and bias.
    pub fn sgd_step(&mut self, grads: &Gradients, eta: f64) -> Result<()> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(IstError::Config(format!("learning rate {eta} must be ≥ 0")));
        }
        grads.check_shapes(self)?;
        for (layer, (gw, gb)) in self
            .layers
            .iter_mut()
            .zip(grads.weights.iter().zip(&grads.bias))
        {
            for (w, g) in layer.weights.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                *w -= eta * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(gb) {
                *b -= eta * g;
            }
        }
        Ok(())
    }

    /// Mean loss and gradients over one batch.
    pub fn loss_and_gradients(
        &self,
        batch: &Matrix,
        targets: &Targets,
        loss: Loss,
    ) -> Result<(f64, Gradients)> {
        let cache = self.forward(batch)?;
        let value = loss_value(cache.logits(), targets, loss)?;
        let grads = self.backward(&cache, targets, loss)?;
        Ok((value, grads))
    }

    /// Every weight and bias, layer by layer (weights then bias).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dims.param_count() as usize);
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        out
    }
}

/// Mean loss of `logits` against `targets`.
pub fn loss_value(logits: &Matrix, targets: &Targets, loss: Loss) -> Result<f64> {
    check_targets(logits, targets, loss)?;
    let batch = logits.rows() as f64;
    let mut total = 0.0;
    match (loss, targets) {
        (Loss::CrossEntropy, Targets::Classes(labels)) => {
            for (r, &label) in labels.iter().enumerate() {
                let row = logits.row(r);
                total += log_sum_exp(row) - row[label];
            }
        }
        (Loss::Mse, Targets::Values(t)) => {
            for r in 0..logits.rows() {
                let sq: f64 = logits
                    .row(r)
                    .iter()
                    .zip(t.row(r))
                    .map(|(y, t)| (y - t) * (y - t))
                    .sum();
                total += 0.5 * sq;
            }
        }
        (Loss::Mse, Targets::Classes(labels)) => {
            for (r, &label) in labels.iter().enumerate() {
                let sq: f64 = logits
                    .row(r)
                    .iter()
                    .enumerate()
                    .map(|(c, y)| {
                        let t = if c == label { 1.0 } else { 0.0 };
                        (y - t) * (y - t)
                    })
                    .sum();
                total += 0.5 * sq;
            }
        }
        (Loss::CrossEntropy, Targets::Values(_)) => unreachable!("rejected by check_targets"),
    }
    Ok(total / batch)
}

/// d(mean loss)/d(logits).
pub(crate) fn loss_gradient(logits: &Matrix, targets: &Targets, loss: Loss) -> Result<Matrix> {
    check_targets(logits, targets, loss)?;
    let batch = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let out = grad.row_mut(r);
        match (loss, targets) {
            (Loss::CrossEntropy, Targets::Classes(labels)) => {
                let lse = log_sum_exp(row);
                for (c, (o, &z)) in out.iter_mut().zip(row).enumerate() {
                    let p = (z - lse).exp();
                    let t = if c == labels[r] { 1.0 } else { 0.0 };
                    *o = (p - t) / batch;
                }
            }
            (Loss::Mse, Targets::Values(t)) => {
                for ((o, &y), &tv) in out.iter_mut().zip(row).zip(t.row(r)) {
                    *o = (y - tv) / batch;
                }
            }
            (Loss::Mse, Targets::Classes(labels)) => {
                for (c, (o, &y)) in out.iter_mut().zip(row).enumerate() {
                    let t = if c == labels[r] { 1.0 } else { 0.0 };
                    *o = (y - t) / batch;
                }
            }
            (Loss::CrossEntropy, Targets::Values(_)) => unreachable!(),
        }
    }
    Ok(grad)
}

fn check_targets(logits: &Matrix, targets: &Targets, loss: Loss) -> Result<()> {
    if logits.rows() == 0 {
        return Err(IstError::Empty("batch".into()));
    }
    if targets.len() != logits.rows() {
        return Err(IstError::Dimension(format!(
            "{} targets for a batch of {}",
            targets.len(),
            logits.rows()
        )));
    }
    match targets {
        Targets::Classes(labels) => {
            if let Some(&bad) = labels.iter().find(|&&c| c >= logits.cols()) {
                return Err(IstError::Dimension(format!(
                    "label {bad} with {} outputs",
                    logits.cols()
                )));
            }
        }
        Targets::Values(t) => {
            if loss == Loss::CrossEntropy {
                return Err(IstError::Config(
                    "cross-entropy needs class labels".into(),
                ));
            }
            if t.cols() != logits.cols() {
                return Err(IstError::Dimension(format!(
                    "targets have {} columns, outputs {}",
                    t.cols(),
                    logits.cols()
                )));
            }
        }
    }
    Ok(())
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(w: &[usize]) -> ModelDims {
        ModelDims::new(w.to_vec()).unwrap()
    }

    #[test]
    fn dims_validation() {
        assert!(ModelDims::new(vec![3, 2]).is_err());
        assert!(ModelDims::new(vec![3, 0, 2]).is_err());
        let d: ModelDims = "2,3,2".parse().unwrap();
        assert_eq!(d.weight_count(), 12);
        assert_eq!(d.bias_count(), 5);
        assert_eq!(d.to_string(), "2,3,2");
    }

    #[test]
    fn sgd_scalar_case() {
        let layers = vec![
            Layer {
                weights: Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
                bias: vec![0.0],
            },
            Layer {
                weights: Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
                bias: vec![0.0],
            },
        ];
        let mut m = Model::from_layers(layers, ActivationKind::Identity).unwrap();
        let mut g = Gradients::zeros_like(&m);
        g.weights[0].set(0, 0, 2.0);
        m.sgd_step(&g, 0.1).unwrap();
        assert_eq!(m.layer(1).weights.get(0, 0), 0.8);
        assert_eq!(m.layer(2).weights.get(0, 0), 1.0);
    }

    #[test]
    fn sgd_zero_rate_is_identity() {
        let mut m = Model::init(dims(&[3, 4, 2]), ActivationKind::Tanh, 1);
        let before = m.clone();
        let mut g = Gradients::zeros_like(&m);
        for w in &mut g.weights {
            w.as_mut_slice().iter_mut().for_each(|v| *v = 3.5);
        }
        m.sgd_step(&g, 0.0).unwrap();
        let bits = |m: &Model| m.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&m), bits(&before));
        assert!(m.sgd_step(&g, -1.0).is_err());
    }

    #[test]
    fn two_steps_equal_one_summed_step() {
        let mut a = Model::init(dims(&[3, 4, 2]), ActivationKind::Tanh, 2);
        let mut b = a.clone();
        let mut g = Gradients::zeros_like(&a);
        for (k, w) in g.weights.iter_mut().enumerate() {
            w.as_mut_slice()
                .iter_mut()
                .enumerate()
                .for_each(|(i, v)| *v = (i + k) as f64 * 0.25);
        }
        a.sgd_step(&g, 0.5).unwrap();
        a.sgd_step(&g, 0.5).unwrap();
        b.sgd_step(&g, 1.0).unwrap();
        for (x, y) in a.flat_params().iter().zip(b.flat_params()) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn uniform_logits_loss_is_ln_classes() {
        let logits = Matrix::zeros(4, 10);
        let v = loss_value(&logits, &Targets::Classes(vec![0, 3, 9, 5]), Loss::CrossEntropy)
            .unwrap();
        assert!((v - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn target_errors() {
        let logits = Matrix::zeros(2, 3);
        assert!(loss_value(&logits, &Targets::Classes(vec![0]), Loss::CrossEntropy).is_err());
        assert!(loss_value(&logits, &Targets::Classes(vec![0, 3]), Loss::CrossEntropy).is_err());
        let t = Targets::Values(Matrix::zeros(2, 3));
        assert!(loss_value(&logits, &t, Loss::CrossEntropy).is_err());
        assert_eq!(loss_value(&logits, &t, Loss::Mse).unwrap(), 0.0);
    }
}
