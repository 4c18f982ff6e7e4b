//! Local models and mini-batch SGD.
//!
//! A model is a stack of dense layers with `tanh` between them and a softmax
//! cross-entropy head. Parameters live in one flat `f64` vector; each layer
//! contributes its `outputs x inputs` weight matrix (row-major) followed by
//! its bias vector.
//!
//! Batches: every epoch visits the samples in a seeded permutation, cut into
//! consecutive batches of `batch_size`; the last batch may be short and its
//! gradient is averaged over its own size. [`batch_schedule`] exposes the
//! exact schedule so callers can replay it.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{ClientDataset, Samples};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite loss or gradient at epoch {epoch}, batch {batch} (learning rate too large?)")]
    NonFinite { epoch: usize, batch: usize },
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("parameters contain non-finite values")]
    NonFiniteParams,
    #[error("feature dimension {got} does not match the model input {expected}")]
    DimMismatch { got: usize, expected: usize },
    #[error("invalid sgd config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    SoftmaxLinear,
    MlpOneHidden { hidden_units: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub init_seed: u64,
}

impl ModelSpec {
    pub fn layers(&self) -> Vec<LayerShape> {
        match self.kind {
            ModelKind::SoftmaxLinear => vec![LayerShape { inputs: self.feature_dim, outputs: self.num_classes }],
            ModelKind::MlpOneHidden { hidden_units } => vec![
                LayerShape { inputs: self.feature_dim, outputs: hidden_units },
                LayerShape { inputs: hidden_units, outputs: self.num_classes },
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
}

impl LayerShape {
    pub fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub values: Vec<f64>,
    pub layers: Vec<LayerShape>,
}

impl ModelParams {
    pub fn zeros(layers: Vec<LayerShape>) -> Self {
        let n = layers.iter().map(LayerShape::param_count).sum();
        Self { values: vec![0.0; n], layers }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.layers
            .iter()
            .map(|l| {
                let o = acc;
                acc += l.param_count();
                o
            })
            .collect()
    }

    /// Activations of every layer for input `x`; the last entry holds the logits.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (idx, (layer, off)) in self.layers.iter().zip(self.offsets()).enumerate() {
            let w = &self.values[off..off + layer.inputs * layer.outputs];
            let b = &self.values[off + layer.inputs * layer.outputs..off + layer.param_count()];
            let input = &acts[idx];
            let mut out: Vec<f64> = (0..layer.outputs)
                .map(|o| {
                    let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                    row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>() + b[o]
                })
                .collect();
            if idx != last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
        acts
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).pop().unwrap_or_default()
    }

    /// Unweighted element-wise mean of `models`, reduced in the given order.
    ///
    /// Accumulates offsets from the first model, so a mean of identical
    /// models reproduces that model bit for bit.
    pub fn mean<'a>(models: impl IntoIterator<Item = &'a ModelParams>) -> Option<ModelParams> {
        let mut iter = models.into_iter();
        let first = iter.next()?;
        let mut acc = vec![0.0; first.len()];
        let mut n = 1usize;
        for m in iter {
            for ((a, v), f) in acc.iter_mut().zip(&m.values).zip(&first.values) {
                *a += v - f;
            }
            n += 1;
        }
        let scale = n as f64;
        let values = first.values.iter().zip(&acc).map(|(f, a)| f + a / scale).collect();
        Some(ModelParams { values, layers: first.layers.clone() })
    }
}

/// Seeded initialisation: weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`,
/// biases zero.
pub fn init_model(spec: &ModelSpec) -> ModelParams {
    let mut params = ModelParams::zeros(spec.layers());
    let mut rng = stream(spec.init_seed, "model-init", &[]);
    let mut off = 0;
    for layer in &params.layers.clone() {
        let bound = 1.0 / (layer.inputs.max(1) as f64).sqrt();
        for w in &mut params.values[off..off + layer.inputs * layer.outputs] {
            *w = rng.random_range(-bound..=bound);
        }
        off += layer.param_count();
    }
    params
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}

/// Mean cross-entropy over `indices` and its gradient.
pub fn loss_and_gradient(params: &ModelParams, samples: &Samples, indices: &[usize]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let offsets = params.offsets();
    for &i in indices {
        let acts = params.forward(samples.row(i));
        let logits = acts.last().expect("at least one layer");
        let label = samples.labels[i];
        let lse = log_sum_exp(logits);
        loss += lse - logits[label];
        let mut delta: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
        delta[label] -= 1.0;
        for l in (0..params.layers.len()).rev() {
            let layer = params.layers[l];
            let off = offsets[l];
            let input = &acts[l];
            for o in 0..layer.outputs {
                let row = &mut grad[off + o * layer.inputs..off + (o + 1) * layer.inputs];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += delta[o] * x;
                }
                grad[off + layer.inputs * layer.outputs + o] += delta[o];
            }
            if l > 0 {
                let w = &params.values[off..off + layer.inputs * layer.outputs];
                delta = (0..layer.inputs)
                    .map(|j| {
                        let back: f64 = (0..layer.outputs).map(|o| w[o * layer.inputs + j] * delta[o]).sum();
                        back * (1.0 - input[j] * input[j])
                    })
                    .collect();
            }
        }
    }
    let n = indices.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, batch_size: 5, local_epochs: 1 }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(TrainError::InvalidConfig("learning_rate must be finite and non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.local_epochs == 0 {
            return Err(TrainError::InvalidConfig("local_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// One list of batches per epoch.
pub fn batch_schedule(samples: usize, batch_size: usize, epochs: usize, seed: u64) -> Vec<Vec<Vec<usize>>> {
    (0..epochs)
        .map(|epoch| {
            let mut order: Vec<usize> = (0..samples).collect();
            order.shuffle(&mut stream(seed, "batch-order", &[epoch as u64]));
            order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
        })
        .collect()
}

/// Plain SGD steps over an explicit schedule.
pub fn sgd_on_batches(
    params: &ModelParams,
    samples: &Samples,
    schedule: &[Vec<Vec<usize>>],
    learning_rate: f64,
) -> Result<ModelParams, TrainError> {
    let mut out = params.clone();
    for (epoch, batches) in schedule.iter().enumerate() {
        for (b, batch) in batches.iter().enumerate() {
            let (loss, grad) = loss_and_gradient(&out, samples, batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFinite { epoch, batch: b });
            }
            for (v, g) in out.values.iter_mut().zip(&grad) {
                *v -= learning_rate * g;
            }
            if !out.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: b });
            }
        }
    }
    Ok(out)
}

/// Trains a copy of `params` on one client's data.
pub fn train_one_client(
    params: &ModelParams,
    dataset: &ClientDataset,
    cfg: &SgdConfig,
    batch_seed: u64,
) -> Result<ModelParams, TrainError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if !params.is_finite() {
        return Err(TrainError::NonFiniteParams);
    }
    if dataset.samples.feature_dim != params.input_dim() {
        return Err(TrainError::DimMismatch { got: dataset.samples.feature_dim, expected: params.input_dim() });
    }
    let schedule = batch_schedule(dataset.len(), cfg.batch_size, cfg.local_epochs, batch_seed);
    sgd_on_batches(params, &dataset.samples, &schedule, cfg.learning_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Argmax accuracy (ties go to the lowest class) and mean cross-entropy.
pub fn evaluate(params: &ModelParams, test: &Samples) -> Evaluation {
    if test.is_empty() {
        return Evaluation { accuracy: 0.0, loss: 0.0 };
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    for i in 0..test.len() {
        let logits = params.logits(test.row(i));
        let mut best = 0;
        for (c, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = c;
            }
        }
        if best == test.labels[i] {
            correct += 1;
        }
        loss += cross_entropy(&logits, test.labels[i]);
    }
    let n = test.len() as f64;
    Evaluation { accuracy: correct as f64 / n, loss: loss / n }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::ClientDataset;

    fn spec(kind: ModelKind) -> ModelSpec {
        ModelSpec { kind, feature_dim: 4, num_classes: 3, init_seed: 5 }
    }

    fn toy_dataset() -> ClientDataset {
        let features = vec![1.0, 0.0, 0.5, -1.0, 0.0, 1.0, 0.2, 0.3, -1.0, -1.0, 0.0, 2.0, 0.4, 0.1, 0.9, -0.2];
        let samples = Samples::new(4, features, vec![0, 1, 2, 1]).unwrap();
        ClientDataset::new(0, samples, 3).unwrap()
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(init_model(&spec(ModelKind::SoftmaxLinear)).len(), 15);
        assert_eq!(init_model(&spec(ModelKind::MlpOneHidden { hidden_units: 8 })).len(), 67);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let s = spec(ModelKind::MlpOneHidden { hidden_units: 8 });
        let a = init_model(&s);
        assert_eq!(a, init_model(&s));
        assert!(a.values[..32].iter().all(|w| w.abs() <= 0.5));
        assert!(a.values[32..40].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let p = init_model(&spec(ModelKind::SoftmaxLinear));
        let cfg = SgdConfig { learning_rate: 0.0, ..SgdConfig::default() };
        let out = train_one_client(&p, &toy_dataset(), &cfg, 1).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn schedule_keeps_the_short_batch() {
        let s = batch_schedule(7, 3, 2, 9);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 1]);
        let mut seen: Vec<usize> = s[1].concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn blowup_is_reported() {
        let p = init_model(&spec(ModelKind::SoftmaxLinear));
        let cfg = SgdConfig { learning_rate: 1e308, batch_size: 1, local_epochs: 3 };
        assert!(matches!(train_one_client(&p, &toy_dataset(), &cfg, 1), Err(TrainError::NonFinite { .. })));
    }

    #[test]
    fn zero_params_give_uniform_loss() {
        let p = ModelParams::zeros(spec(ModelKind::SoftmaxLinear).layers());
        let test = Samples::new(4, vec![0.3; 24], vec![0, 1, 2, 0, 1, 2]).unwrap();
        let e = evaluate(&p, &test);
        assert!((e.loss - 3f64.ln()).abs() < 1e-15);
        assert!((e.accuracy - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn separable_toy_set_is_classified_perfectly() {
        let mut p = ModelParams::zeros(vec![LayerShape { inputs: 2, outputs: 2 }]);
        p.values[..4].copy_from_slice(&[5.0, 0.0, 0.0, 5.0]);
        let test = Samples::new(2, vec![1.0, 0.0, 0.0, 1.0, 2.0, 0.1, 0.1, 3.0], vec![0, 1, 0, 1]).unwrap();
        assert_eq!(evaluate(&p, &test).accuracy, 1.0);
    }

    #[test]
    fn input_is_not_mutated() {
        let p = init_model(&spec(ModelKind::MlpOneHidden { hidden_units: 3 }));
        let before = p.clone();
        let ds = toy_dataset();
        let ds_before = ds.clone();
        let _ = train_one_client(&p, &ds, &SgdConfig::default(), 3).unwrap();
        assert_eq!(p, before);
        assert_eq!(ds, ds_before);
    }

    #[test]
    fn mean_of_identical_models_is_exact() {
        let p = init_model(&spec(ModelKind::SoftmaxLinear));
        assert_eq!(ModelParams::mean([&p, &p, &p]).unwrap(), p);
    }
}
