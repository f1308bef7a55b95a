//! Differentiable victim models: small MLPs with sigmoid-calibrated
//! multi-label outputs, analytic input-Jacobians, a plain-SGD trainer, and a
//! finite-difference Jacobian oracle for tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::topk::ScoreVector;

/// Sigmoid calibration `1/(1+e^-raw)`: maps raw scores into (0,1) without
/// changing their ranking.
#[inline]
pub fn sigmoid_calibrate(raw: f64) -> f64 {
    1.0 / (1.0 + (-raw).exp())
}

#[inline]
fn sigmoid_derivative(raw: f64) -> f64 {
    let s = sigmoid_calibrate(raw);
    s * (1.0 - s)
}

/// A differentiable multi-label victim model.
pub trait Predictor {
    fn num_labels(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Calibrated scores `F(x)`, entries in (0,1).
    fn predict(&self, x: &[f64]) -> Result<ScoreVector>;
    /// Dense `m x d` matrix of `d f_j / d x_i`.
    fn input_jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - pre.tanh().powi(2),
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One dense layer, weights stored row-major (`out_dim x in_dim`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn random(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let scale = 1.0 / (in_dim as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weights: (0..in_dim * out_dim)
                .map(|_| rng.gen_range(-scale..scale))
                .collect(),
            bias: vec![0.0; out_dim],
        }
    }

    #[inline]
    fn weight(&self, o: usize, i: usize) -> f64 {
        self.weights[o * self.in_dim + i]
    }

    fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (o, acc) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            *acc += row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
        out
    }
}

/// Fully connected victim with tanh hidden layers and elementwise sigmoid
/// outputs. Zero hidden layers gives a linear-sigmoid model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<DenseLayer>,
    pub hidden_activation: Activation,
}

struct ForwardTrace {
    /// Pre-activation values per layer.
    pre: Vec<Vec<f64>>,
    /// Post-activation values per layer (sigmoid on the last).
    post: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Randomly initialized model with the given hidden widths.
    pub fn random(
        input_dim: usize,
        hidden: &[usize],
        num_labels: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(num_labels);
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer::random(w[0], w[1], rng))
            .collect();
        Self {
            layers,
            hidden_activation: activation,
        }
    }

    /// Model with all-zero parameters; predicts 0.5 everywhere.
    pub fn zeros(input_dim: usize, hidden: &[usize], num_labels: usize) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(num_labels);
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer::zeros(w[0], w[1]))
            .collect();
        Self {
            layers,
            hidden_activation: Activation::Tanh,
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_parameter("x", "non-finite input entry"));
        }
        Ok(())
    }

    fn forward_trace(&self, x: &[f64]) -> ForwardTrace {
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&current);
            let a: Vec<f64> = if l == last {
                z.iter().copied().map(sigmoid_calibrate).collect()
            } else {
                z.iter().map(|&v| self.hidden_activation.apply(v)).collect()
            };
            pre.push(z);
            current = a.clone();
            post.push(a);
        }
        ForwardTrace { pre, post }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let model: MlpModel = serde_json::from_reader(std::io::BufReader::new(file))?;
        if model.layers.is_empty() {
            return Err(Error::invalid_parameter("model", "no layers"));
        }
        for w in model.layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::invalid_parameter(
                    "model",
                    "inconsistent layer shapes",
                ));
            }
        }
        for layer in &model.layers {
            if layer.weights.len() != layer.in_dim * layer.out_dim
                || layer.bias.len() != layer.out_dim
                || layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite())
            {
                return Err(Error::invalid_parameter("model", "malformed layer"));
            }
        }
        Ok(model)
    }
}

impl Predictor for MlpModel {
    fn num_labels(&self) -> usize {
        self.layers.last().expect("at least one layer").out_dim
    }

    fn input_dim(&self) -> usize {
        self.layers.first().expect("at least one layer").in_dim
    }

    fn predict(&self, x: &[f64]) -> Result<ScoreVector> {
        self.check_input(x)?;
        let trace = self.forward_trace(x);
        ScoreVector::new(trace.post.last().expect("at least one layer").clone())
    }

    fn input_jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let trace = self.forward_trace(x);
        let d = self.input_dim();
        let last = self.layers.len() - 1;

        // jac holds d(layer output)/dx, updated layer by layer
        let mut jac: Vec<Vec<f64>> = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = vec![vec![0.0; d]; layer.out_dim];
            for (o, row) in next.iter_mut().enumerate() {
                let deriv = if l == last {
                    sigmoid_derivative(trace.pre[l][o])
                } else {
                    self.hidden_activation.derivative(trace.pre[l][o])
                };
                if l == 0 {
                    for (i, entry) in row.iter_mut().enumerate() {
                        *entry = deriv * layer.weight(o, i);
                    }
                } else {
                    for i in 0..d {
                        let mut acc = 0.0;
                        for (p, prev_row) in jac.iter().enumerate() {
                            acc += layer.weight(o, p) * prev_row[i];
                        }
                        row[i] = deriv * acc;
                    }
                }
            }
            jac = next;
        }
        Ok(jac)
    }
}

/// Central-difference Jacobian `(f(x+h e_i) - f(x-h e_i)) / 2h`, the oracle
/// against which analytic Jacobians are checked.
pub fn finite_difference_jacobian(
    model: &dyn Predictor,
    x: &[f64],
    h: f64,
) -> Result<Vec<Vec<f64>>> {
    let m = model.num_labels();
    let d = model.input_dim();
    let mut jac = vec![vec![0.0; d]; m];
    let mut probe = x.to_vec();
    for i in 0..d {
        probe[i] = x[i] + h;
        let plus = model.predict(&probe)?;
        probe[i] = x[i] - h;
        let minus = model.predict(&probe)?;
        probe[i] = x[i];
        for (j, row) in jac.iter_mut().enumerate() {
            row[i] = (plus.get(j) - minus.get(j)) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Training hyperparameters for the SGD victim trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden_layers: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.5,
            batch_size: 32,
            seed: 0,
            hidden_layers: vec![64],
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid_parameter(
                "learning_rate",
                "must be positive",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid_parameter("batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// Train a sigmoid-output MLP with per-label binary cross-entropy and plain
/// minibatch SGD. Deterministic given the seed.
pub fn train_victim(dataset: &Dataset, cfg: &TrainConfig) -> Result<MlpModel> {
    cfg.validate()?;
    if dataset.instances.is_empty() {
        return Err(Error::invalid_parameter("dataset", "no instances"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MlpModel::random(
        dataset.d,
        &cfg.hidden_layers,
        dataset.m,
        Activation::Tanh,
        &mut rng,
    );

    let n = dataset.instances.len();
    let targets: Vec<Vec<f64>> = dataset
        .instances
        .iter()
        .map(|inst| {
            inst.truth
                .multi_hot()
                .iter()
                .map(|&b| b as f64)
                .collect()
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        // Fisher-Yates with the shared stream keeps runs reproducible
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(cfg.batch_size) {
            sgd_batch(&mut model, dataset, &targets, batch, cfg.learning_rate);
        }
    }
    Ok(model)
}

fn sgd_batch(
    model: &mut MlpModel,
    dataset: &Dataset,
    targets: &[Vec<f64>],
    batch: &[usize],
    lr: f64,
) {
    let mut grads: Vec<DenseLayer> = model
        .layers
        .iter()
        .map(|l| DenseLayer::zeros(l.in_dim, l.out_dim))
        .collect();
    let last = model.layers.len() - 1;

    for &idx in batch {
        let x = &dataset.instances[idx].x;
        let trace = model.forward_trace(x);
        // BCE + sigmoid: delta at the output pre-activation is (score - y)
        let mut delta: Vec<f64> = trace.post[last]
            .iter()
            .zip(&targets[idx])
            .map(|(&f, &y)| f - y)
            .collect();
        for l in (0..model.layers.len()).rev() {
            let input: &[f64] = if l == 0 { x } else { &trace.post[l - 1] };
            let layer = &model.layers[l];
            let grad = &mut grads[l];
            for (o, &dl) in delta.iter().enumerate() {
                grad.bias[o] += dl;
                let row = &mut grad.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, &xi) in row.iter_mut().zip(input) {
                    *g += dl * xi;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; layer.in_dim];
                for (i, p) in prev.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (o, &dl) in delta.iter().enumerate() {
                        acc += layer.weight(o, i) * dl;
                    }
                    *p = acc * model.hidden_activation.derivative(trace.pre[l - 1][i]);
                }
                delta = prev;
            }
        }
    }

    let scale = lr / batch.len() as f64;
    for (layer, grad) in model.layers.iter_mut().zip(&grads) {
        for (w, g) in layer.weights.iter_mut().zip(&grad.weights) {
            *w -= scale * g;
        }
        for (b, g) in layer.bias.iter_mut().zip(&grad.bias) {
            *b -= scale * g;
        }
    }
}

/// Fraction of instances whose thresholded prediction `{j : f_j > 0.5}`
/// equals the truth set exactly.
pub fn subset_accuracy(model: &dyn Predictor, dataset: &Dataset) -> Result<f64> {
    if dataset.instances.is_empty() {
        return Err(Error::invalid_parameter("dataset", "no instances"));
    }
    let mut hits = 0usize;
    for inst in &dataset.instances {
        let scores = model.predict(&inst.x)?;
        let predicted: Vec<usize> = (0..dataset.m).filter(|&j| scores.get(j) > 0.5).collect();
        let truth: Vec<usize> = inst.truth.iter().collect();
        if predicted == truth {
            hits += 1;
        }
    }
    Ok(hits as f64 / dataset.instances.len() as f64)
}
