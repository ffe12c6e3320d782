//! Fast gradient sign attacks and TOP-K robustness sweeps.
//!
//! `adv = x + eps * sign(grad_x J(theta, x, y))` with the three-valued sign
//! (zero gradients give zero perturbation) and the true labels `y`. Attacks
//! are white-box: each model is attacked with its own gradients.

use std::fmt;

use crate::data::{DatasetSplit, NormStats};
use crate::error::{Error, Result};
use crate::layers::softmax_xent;
use crate::model::Network;
use crate::tensor::{Shape4, Tensor};

/// `-1`, `0` or `+1` per element.
pub fn sign(g: &Tensor) -> Tensor {
    g.map(|v| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

/// `dJ/dx` for the mean cross-entropy of the batch. The model is cloned, so
/// its parameters and gradient buffers are untouched.
pub fn input_gradient(model: &Network, x: &Tensor, y: &[usize]) -> Result<Tensor> {
    let mut scratch = model.clone();
    let logits = scratch.forward(x, true)?;
    let (_, grad) = softmax_xent(&logits, y)?;
    scratch.backward(&grad)
}

/// Perturbs every element by `steps[c] * sign(grad)` where `c` is its channel.
pub fn fgsm_per_channel(model: &Network, x: &Tensor, y: &[usize], steps: &[f64]) -> Result<Tensor> {
    let s = Shape4::of(x)?;
    if steps.len() != s.c {
        return Err(Error::Usage(format!(
            "{} per-channel steps for {} channels",
            steps.len(),
            s.c
        )));
    }
    if let Some(bad) = steps.iter().find(|e| !e.is_finite() || **e < 0.0) {
        return Err(Error::Usage(format!("epsilon must be non-negative, got {bad}")));
    }
    if steps.iter().all(|&e| e == 0.0) {
        return Ok(x.clone());
    }
    let direction = sign(&input_gradient(model, x, y)?);
    let plane = s.h * s.w;
    let data = x
        .data()
        .iter()
        .zip(direction.data())
        .enumerate()
        .map(|(i, (&xi, &di))| xi + steps[(i / plane) % s.c] * di)
        .collect();
    Tensor::new(x.shape(), data)
}

/// Single-step attack with the same `epsilon` on every element.
pub fn fgsm(model: &Network, x: &Tensor, y: &[usize], epsilon: f64) -> Result<Tensor> {
    let c = Shape4::of(x)?.c;
    fgsm_per_channel(model, x, y, &vec![epsilon; c])
}

/// Fraction of rows whose target ranks among the `k` largest logits.
/// Equal logits rank the lower class index first.
pub fn topk_accuracy(logits: &Tensor, targets: &[usize], k: usize) -> Result<f64> {
    let (n, classes) = match *logits.shape() {
        [n, c] => (n, c),
        _ => return Err(Error::Shape(format!("logits must be (N, K), got {:?}", logits.shape()))),
    };
    if k == 0 || k > classes {
        return Err(Error::Usage(format!("k = {k} outside [1, {classes}]")));
    }
    if targets.len() != n {
        return Err(Error::Shape(format!("{} targets for {n} rows", targets.len())));
    }
    let mut hits = 0usize;
    for (row, &t) in logits.data().chunks(classes).zip(targets) {
        if t >= classes {
            return Err(Error::Data(format!("target {t} outside [0, {classes})")));
        }
        let zt = row[t];
        let rank = row
            .iter()
            .enumerate()
            .filter(|&(j, &z)| z > zt || (z == zt && j < t))
            .count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Where epsilon is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpsilonDomain {
    /// Raw `[0, 1]` pixel units; divided by each channel's std before use.
    Pixel,
    /// Directly in the normalized model-input space.
    Normalized,
}

impl fmt::Display for EpsilonDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EpsilonDomain::Pixel => "pixel",
            EpsilonDomain::Normalized => "normalized",
        })
    }
}

impl std::str::FromStr for EpsilonDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel" => Ok(EpsilonDomain::Pixel),
            "normalized" => Ok(EpsilonDomain::Normalized),
            _ => Err(Error::Config(format!("unknown epsilon domain {s:?}"))),
        }
    }
}

pub const DEFAULT_SWEEP: [f64; 6] = [0.0, 0.003, 0.005, 0.007, 0.01, 0.02];

#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    pub epsilons: Vec<f64>,
    pub domain: EpsilonDomain,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilons: DEFAULT_SWEEP.to_vec(),
            domain: EpsilonDomain::Pixel,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::Usage("empty epsilon sweep".into()));
        }
        if self.epsilons.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(Error::Usage("epsilons must be finite and non-negative".into()));
        }
        if self.epsilons.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Usage("epsilon sweep must be sorted ascending".into()));
        }
        Ok(())
    }

    /// Per-channel steps in model-input units for one epsilon.
    pub fn steps(&self, epsilon: f64, channels: usize, norm: Option<&NormStats>) -> Result<Vec<f64>> {
        match (self.domain, norm) {
            (EpsilonDomain::Normalized, _) => Ok(vec![epsilon; channels]),
            (EpsilonDomain::Pixel, Some(stats)) if stats.std.len() == channels => {
                Ok(stats.std.iter().map(|s| epsilon / s).collect())
            }
            (EpsilonDomain::Pixel, Some(_)) => {
                Err(Error::Usage("normalization statistics do not match the input channels".into()))
            }
            (EpsilonDomain::Pixel, None) => Ok(vec![epsilon; channels]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessRow {
    pub split: String,
    pub epsilon: f64,
    pub top1: f64,
    pub top5: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessReport {
    pub domain: EpsilonDomain,
    pub rows: Vec<RobustnessRow>,
}

/// Clean or adversarial TOP-1 / TOP-5 accuracy of one split at one epsilon.
pub fn attacked_accuracy(
    model: &Network,
    split: &DatasetSplit,
    steps: &[f64],
    batch_size: usize,
) -> Result<(f64, f64)> {
    if split.is_empty() || batch_size == 0 {
        return Err(Error::Usage("attack needs data and a positive batch size".into()));
    }
    let order: Vec<usize> = (0..split.len()).collect();
    let mut eval = model.clone();
    let (mut top1, mut top5) = (0.0, 0.0);
    for idx in order.chunks(batch_size) {
        let (x, y) = split.batch(idx, None)?;
        let adv = fgsm_per_channel(model, &x, &y, steps)?;
        let logits = eval.forward(&adv, false)?;
        let k = logits.shape()[1];
        let n = y.len() as f64;
        top1 += topk_accuracy(&logits, &y, 1)? * n;
        top5 += topk_accuracy(&logits, &y, 5.min(k))? * n;
    }
    Ok((top1 / split.len() as f64, top5 / split.len() as f64))
}

/// Attacks every split at every epsilon, regenerating examples each time.
pub fn robustness_sweep(
    model: &Network,
    splits: &[&DatasetSplit],
    attack: &AttackConfig,
    norm: Option<&NormStats>,
    batch_size: usize,
) -> Result<RobustnessReport> {
    attack.validate()?;
    let channels = model.spec().input.0;
    let mut rows = Vec::with_capacity(attack.epsilons.len() * splits.len());
    for &eps in &attack.epsilons {
        let steps = attack.steps(eps, channels, norm)?;
        for split in splits {
            let (top1, top5) = attacked_accuracy(model, split, &steps, batch_size)?;
            rows.push(RobustnessRow {
                split: split.role.name().to_string(),
                epsilon: eps,
                top1,
                top5,
            });
        }
    }
    Ok(RobustnessReport {
        domain: attack.domain,
        rows,
    })
}
