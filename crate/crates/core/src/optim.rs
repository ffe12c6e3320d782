//! Mini-batch SGD with classical momentum and L2 weight decay.
//!
//! The regularized batch objective is `mean(loss_i) + lambda * sum(w^2)` over
//! all weight tensors (biases excluded), so the decay contributes `2 lambda w`
//! to each weight gradient. The learning rate is constant.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::layers::{per_sample_xent, softmax_xent, Param};
use crate::model::Network;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Random horizontal flips with probability 0.5 per sample per epoch.
    pub flip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 32,
            max_epochs: 500,
            seed: 0,
            flip: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be >= 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay {} must be >= 0", self.weight_decay)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Mean of the per-sample losses plus `lambda * sum(w^2)` over decayed params.
pub fn global_loss<'a>(
    per_sample: &[f64],
    params: impl IntoIterator<Item = &'a Param>,
    weight_decay: f64,
) -> Result<f64> {
    if per_sample.is_empty() {
        return Err(Error::Usage("global loss over an empty batch".into()));
    }
    let data = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    let reg: f64 = params
        .into_iter()
        .filter(|p| p.decay)
        .map(|p| p.value.sum_squares())
        .sum();
    Ok(data + weight_decay * reg)
}

/// Momentum buffers, one per parameter in [`Network::params`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(model: &Network) -> Self {
        Self {
            velocity: model
                .params()
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape()).expect("param shape"))
                .collect(),
        }
    }
}

/// `v := m v + (g + 2 lambda w)`, `w := w - lr v`, then gradients are cleared.
pub fn sgd_step<'a>(
    params: impl IntoIterator<Item = &'a mut Param>,
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<()> {
    let params: Vec<&mut Param> = params.into_iter().collect();
    if params.len() != state.velocity.len() {
        return Err(Error::State(format!(
            "{} parameters but {} velocity buffers",
            params.len(),
            state.velocity.len()
        )));
    }
    for (p, v) in params.into_iter().zip(&mut state.velocity) {
        if v.shape() != p.value.shape() || p.grad.shape() != p.value.shape() {
            return Err(Error::State(format!(
                "velocity {:?} / grad {:?} do not match parameter {:?}",
                v.shape(),
                p.grad.shape(),
                p.value.shape()
            )));
        }
        let decay = if p.decay { 2.0 * config.weight_decay } else { 0.0 };
        let w = p.value.data_mut();
        for ((wi, vi), gi) in w.iter_mut().zip(v.data_mut()).zip(p.grad.data()) {
            *vi = config.momentum * *vi + (gi + decay * *wi);
            *wi -= config.learning_rate * *vi;
        }
        p.zero_grad();
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    /// Mean cross-entropy over the epoch's samples (without the decay term).
    pub loss: f64,
    pub accuracy: f64,
}

fn argmax(row: &[f64]) -> usize {
    // First index wins ties.
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Shuffle order and flip mask for one epoch, drawn from a stream seeded with
/// `seed + epoch`.
pub fn epoch_plan(len: usize, seed: u64, epoch: usize, flip: bool) -> (Vec<usize>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64));
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    let flips = (0..len).map(|_| flip && rng.random_bool(0.5)).collect();
    (order, flips)
}

/// One pass over `data` in mini-batches (the last batch may be short).
/// Loss and accuracy are accumulated from the training forward passes.
pub fn train_epoch(
    model: &mut Network,
    state: &mut OptimizerState,
    data: &DatasetSplit,
    config: &TrainConfig,
    epoch: usize,
) -> Result<EpochMetrics> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Usage("training on an empty dataset".into()));
    }
    let (order, flips) = epoch_plan(data.len(), config.seed, epoch, config.flip);
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for (idx, flip) in order
        .chunks(config.batch_size)
        .zip(flips.chunks(config.batch_size))
    {
        let (x, y) = data.batch(idx, Some(flip))?;
        let logits = model.forward(&x, true)?;
        let (loss, grad) = softmax_xent(&logits, &y)?;
        if !loss.is_finite() {
            return Err(Error::Numeric {
                location: format!("loss at epoch {epoch}"),
                msg: format!("batch loss is {loss}"),
            });
        }
        loss_sum += loss * y.len() as f64;
        let k = logits.shape()[1];
        correct += logits
            .data()
            .chunks(k)
            .zip(&y)
            .filter(|(row, &t)| argmax(row) == t)
            .count();
        model.backward(&grad)?;
        sgd_step(model.params_mut().into_iter().map(|(_, p)| p), state, config)?;
    }
    Ok(EpochMetrics {
        loss: loss_sum / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    pub loss: f64,
    pub top1: f64,
    pub top5: f64,
    pub samples: usize,
}

/// Clean, flip-free evaluation in fixed-size batches.
pub fn evaluate(model: &mut Network, data: &DatasetSplit, batch_size: usize) -> Result<EvalMetrics> {
    if data.is_empty() || batch_size == 0 {
        return Err(Error::Usage("evaluation needs data and a positive batch size".into()));
    }
    let order: Vec<usize> = (0..data.len()).collect();
    let (mut loss, mut top1, mut top5) = (0.0, 0.0, 0.0);
    for idx in order.chunks(batch_size) {
        let (x, y) = data.batch(idx, None)?;
        let logits = model.forward(&x, false)?;
        loss += per_sample_xent(&logits, &y)?.iter().sum::<f64>();
        let n = y.len() as f64;
        let k = logits.shape()[1];
        top1 += crate::adversarial::topk_accuracy(&logits, &y, 1)? * n;
        top5 += crate::adversarial::topk_accuracy(&logits, &y, 5.min(k))? * n;
    }
    let n = data.len() as f64;
    Ok(EvalMetrics {
        loss: loss / n,
        top1: top1 / n,
        top5: top5 / n,
        samples: data.len(),
    })
}
