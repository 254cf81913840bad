use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::network::{argmax_rows, Network, Scalar};
use super::NnError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    SoftmaxCrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.005, batch_size: 64, epochs: 5, seed: 0, loss: LossKind::SoftmaxCrossEntropy }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(NnError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: u64,
    pub unmasked: u64,
}

/// Sample order for one epoch: a ChaCha8 shuffle keyed by `seed`, on stream `epoch`.
pub fn epoch_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

fn batch_inputs<S: Scalar>(data: &Dataset, idx: &[usize]) -> Array2<S> {
    data.inputs().select(Axis(0), idx).mapv(|v| S::from_f32(v).expect("f32 converts"))
}

/// One shuffled pass of minibatch SGD. A zero learning rate is allowed here (it leaves the
/// weights untouched); [`TrainConfig::validate`] is where experiment configs reject it.
pub fn train_epoch<S: Scalar>(
    net: &mut Network<S>,
    data: &Dataset,
    cfg: &TrainConfig,
    epoch: u64,
) -> Result<EpochStats, NnError> {
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(NnError::Config("batch_size must be >= 1".into()));
    }
    if data.features() != net.input_len() {
        return Err(NnError::Dimension { expected: net.input_len(), found: data.features() });
    }
    let lr = S::from_f64(cfg.learning_rate).ok_or_else(|| NnError::Config("learning rate".into()))?;
    let order = epoch_order(data.len(), cfg.seed, epoch);
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    for (batch_index, idx) in order.chunks(cfg.batch_size).enumerate() {
        let x = batch_inputs::<S>(data, idx);
        let labels: Vec<u8> = idx.iter().map(|&i| data.labels()[i]).collect();
        let (loss, grads, hits) = net.loss_and_gradients(x.view(), &labels)?;
        let loss = loss.to_f64().unwrap_or(f64::NAN);
        if !loss.is_finite() {
            return Err(NnError::NonFinite { epoch, batch: batch_index, loss });
        }
        net.apply_gradients(&grads, lr);
        loss_sum += loss * idx.len() as f64;
        correct += hits;
    }
    if !net.is_finite() {
        return Err(NnError::NonFinite { epoch, batch: order.len().div_ceil(cfg.batch_size), loss: f64::NAN });
    }
    Ok(EpochStats {
        mean_loss: loss_sum / data.len() as f64,
        train_accuracy: correct as f64 / data.len() as f64,
    })
}

/// Argmax predictions for every sample, evaluated in chunks.
pub fn predict<S: Scalar>(net: &Network<S>, data: &Dataset) -> Result<Vec<usize>, NnError> {
    let mut out = Vec::with_capacity(data.len());
    let all: Vec<usize> = (0..data.len()).collect();
    for idx in all.chunks(1000) {
        let x = batch_inputs::<S>(data, idx);
        out.extend(argmax_rows(&net.logits(x.view())?));
    }
    Ok(out)
}

/// Fraction of samples whose argmax logit (lowest index on ties) equals the label.
pub fn evaluate<S: Scalar>(net: &Network<S>, data: &Dataset) -> Result<f64, NnError> {
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let preds = predict(net, data)?;
    let hits = preds.iter().zip(data.labels()).filter(|(p, l)| **p == **l as usize).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Biases are never masked, so `unmasked = biases + surviving weights`.
pub fn count_parameters<S: Scalar>(net: &Network<S>) -> ParamCount {
    let mut total = 0u64;
    let mut unmasked = 0u64;
    for layer in net.layers() {
        let weights = layer.weights().len() as u64;
        let biases = layer.bias().len() as u64;
        total += weights + biases;
        unmasked += weights - layer.masked_count() as u64 + biases;
    }
    ParamCount { total, unmasked }
}
