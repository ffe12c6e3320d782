//! Experiment configuration files and the built-in experiment set.
//!
//! The format is line-oriented text. Blank lines and lines starting with `#`
//! are ignored. `[section]` headers open a section, and every other line is
//! `key = value`. Keys before the first header belong to the top level.
//!
//! ```text
//! name = shallow-ssim
//! description = free text
//!
//! [model]
//! input = 3x32x32
//! # one line per layer, in order
//! layer = ssim out=32 kernel=7x7 stride=1 padding=3
//! layer = relu
//!
//! [ssim]       c1, c2, c3, alpha, beta, gamma
//! [train]      learning_rate, momentum, weight_decay, batch_size, max_epochs, seed, flip
//! [data]       dir, train_per_class, val_per_class (0 = whole split), subset_seed
//! [attack]     epsilons (comma list), domain (pixel | normalized); optional section
//! [output]     dir
//! ```
//!
//! Inline comments are not supported; `#` only starts a comment at the
//! beginning of a line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::adversarial::{AttackConfig, EpsilonDomain};
use crate::error::{Error, Result};
use crate::layers::LayerSpec;
use crate::model::ModelSpec;
use crate::optim::TrainConfig;
use crate::ssim::SsimConstants;

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub dir: PathBuf,
    /// Training records per class; `None` uses the whole split.
    pub train_per_class: Option<usize>,
    pub val_per_class: Option<usize>,
    pub subset_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data/cifar-10-batches-bin"),
            train_per_class: Some(500),
            val_per_class: None,
            subset_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub description: String,
    pub model: ModelSpec,
    pub ssim: SsimConstants,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub attack: Option<AttackConfig>,
    pub output_dir: PathBuf,
}

fn join_floats(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn per_class_text(v: Option<usize>) -> String {
    v.unwrap_or(0).to_string()
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Config("config needs a name".into()));
        }
        self.model.validate()?;
        self.ssim.validate()?;
        self.train.validate()?;
        if let Some(a) = &self.attack {
            a.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Sections that determine the trained weights, as hashed by
    /// [`ExperimentConfig::fingerprint`].
    fn weight_defining_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[model]");
        let (c, h, w) = self.model.input;
        let _ = writeln!(s, "input = {c}x{h}x{w}");
        for l in &self.model.layers {
            let _ = writeln!(s, "layer = {l}");
        }
        let k = &self.ssim;
        let _ = writeln!(s, "\n[ssim]");
        let _ = writeln!(s, "c1 = {}\nc2 = {}\nc3 = {}", k.c1, k.c2, k.c3);
        let _ = writeln!(s, "alpha = {}\nbeta = {}\ngamma = {}", k.alpha, k.beta, k.gamma);
        let t = &self.train;
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "learning_rate = {}", t.learning_rate);
        let _ = writeln!(s, "momentum = {}", t.momentum);
        let _ = writeln!(s, "weight_decay = {}", t.weight_decay);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "max_epochs = {}", t.max_epochs);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "flip = {}", t.flip);
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "description = {}", self.description);
        s.push('\n');
        s.push_str(&self.weight_defining_text());
        let d = &self.data;
        let _ = writeln!(s, "\n[data]");
        let _ = writeln!(s, "dir = {}", d.dir.display());
        let _ = writeln!(s, "train_per_class = {}", per_class_text(d.train_per_class));
        let _ = writeln!(s, "val_per_class = {}", per_class_text(d.val_per_class));
        let _ = writeln!(s, "subset_seed = {}", d.subset_seed);
        if let Some(a) = &self.attack {
            let _ = writeln!(s, "\n[attack]");
            let _ = writeln!(s, "epsilons = {}", join_floats(&a.epsilons));
            let _ = writeln!(s, "domain = {}", a.domain);
        }
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", self.output_dir.display());
        s
    }

    /// Hex SHA-256 over the model, SSIM, training and subset settings. Paths,
    /// names and attack settings do not change it.
    pub fn fingerprint(&self) -> String {
        let d = &self.data;
        let text = format!(
            "{}\n[data]\ntrain_per_class = {}\nval_per_class = {}\nsubset_seed = {}\n",
            self.weight_defining_text(),
            per_class_text(d.train_per_class),
            per_class_text(d.val_per_class),
            d.subset_seed
        );
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig {
            name: String::new(),
            description: String::new(),
            model: ModelSpec {
                input: (3, 32, 32),
                layers: Vec::new(),
            },
            ssim: SsimConstants::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            attack: None,
            output_dir: PathBuf::from("runs"),
        };
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let ctx = |msg: String| Error::Config(format!("line {}: {msg}", lineno + 1));
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if !matches!(section.as_str(), "model" | "ssim" | "train" | "data" | "attack" | "output") {
                    return Err(ctx(format!("unknown section [{section}]")));
                }
                if section == "attack" && cfg.attack.is_none() {
                    cfg.attack = Some(AttackConfig::default());
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| ctx(format!("expected key = value, got {line:?}")))?;
            let float = || -> Result<f64> {
                value.parse().map_err(|_| ctx(format!("{key}: bad number {value:?}")))
            };
            let int = || -> Result<usize> {
                value.parse().map_err(|_| ctx(format!("{key}: bad integer {value:?}")))
            };
            let seed = || -> Result<u64> {
                value.parse().map_err(|_| ctx(format!("{key}: bad integer {value:?}")))
            };
            let per_class = || -> Result<Option<usize>> { Ok(Some(int()?).filter(|&v| v > 0)) };
            match (section.as_str(), key) {
                ("", "name") => cfg.name = value.to_string(),
                ("", "description") => cfg.description = value.to_string(),
                ("model", "input") => {
                    let dims: Vec<usize> = value
                        .split('x')
                        .map(|d| d.trim().parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| ctx(format!("bad input shape {value:?}")))?;
                    match dims[..] {
                        [c, h, w] => cfg.model.input = (c, h, w),
                        _ => return Err(ctx(format!("input must be CxHxW, got {value:?}"))),
                    }
                }
                ("model", "layer") => cfg
                    .model
                    .layers
                    .push(value.parse().map_err(|e: Error| ctx(e.to_string()))?),
                ("ssim", "c1") => cfg.ssim.c1 = float()?,
                ("ssim", "c2") => cfg.ssim.c2 = float()?,
                ("ssim", "c3") => cfg.ssim.c3 = float()?,
                ("ssim", "alpha") => cfg.ssim.alpha = float()?,
                ("ssim", "beta") => cfg.ssim.beta = float()?,
                ("ssim", "gamma") => cfg.ssim.gamma = float()?,
                ("train", "learning_rate") => cfg.train.learning_rate = float()?,
                ("train", "momentum") => cfg.train.momentum = float()?,
                ("train", "weight_decay") => cfg.train.weight_decay = float()?,
                ("train", "batch_size") => cfg.train.batch_size = int()?,
                ("train", "max_epochs") => cfg.train.max_epochs = int()?,
                ("train", "seed") => cfg.train.seed = seed()?,
                ("train", "flip") => {
                    cfg.train.flip = value
                        .parse()
                        .map_err(|_| ctx(format!("flip must be true or false, got {value:?}")))?
                }
                ("data", "dir") => cfg.data.dir = PathBuf::from(value),
                ("data", "train_per_class") => cfg.data.train_per_class = per_class()?,
                ("data", "val_per_class") => cfg.data.val_per_class = per_class()?,
                ("data", "subset_seed") => cfg.data.subset_seed = seed()?,
                ("attack", "epsilons") => {
                    let eps = parse_epsilons(value).map_err(|e| ctx(e.to_string()))?;
                    cfg.attack.get_or_insert_with(AttackConfig::default).epsilons = eps;
                }
                ("attack", "domain") => {
                    let domain: EpsilonDomain = value.parse().map_err(|e: Error| ctx(e.to_string()))?;
                    cfg.attack.get_or_insert_with(AttackConfig::default).domain = domain;
                }
                ("output", "dir") => cfg.output_dir = PathBuf::from(value),
                (sec, k) => return Err(ctx(format!("unknown key {k:?} in section [{sec}]"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Parses a comma-separated epsilon list.
pub fn parse_epsilons(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Usage(format!("bad epsilon {t:?}")))
        })
        .collect()
}

fn shallow(first: LayerSpec, relu_after_first: bool) -> ModelSpec {
    let mut layers = vec![first];
    if relu_after_first {
        layers.push(LayerSpec::Relu);
    }
    layers.extend([
        LayerSpec::maxpool(2),
        LayerSpec::conv(32, 5, 1, 2),
        LayerSpec::Relu,
        LayerSpec::maxpool(2),
        LayerSpec::fc(10),
        LayerSpec::SoftmaxXent,
    ]);
    ModelSpec {
        input: (3, 32, 32),
        layers,
    }
}

fn deep(last: LayerSpec) -> ModelSpec {
    let mut layers = Vec::new();
    for _ in 0..3 {
        layers.extend([LayerSpec::conv(32, 5, 1, 2), LayerSpec::Relu, LayerSpec::maxpool(2)]);
    }
    layers.extend([last, LayerSpec::Relu, LayerSpec::fc(10), LayerSpec::SoftmaxXent]);
    ModelSpec {
        input: (3, 32, 32),
        layers,
    }
}

fn experiment(name: &str, description: &str, model: ModelSpec) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        description: description.to_string(),
        model,
        ssim: SsimConstants::default(),
        train: TrainConfig {
            max_epochs: 30,
            seed: 1,
            ..TrainConfig::default()
        },
        data: DataConfig::default(),
        attack: Some(AttackConfig::default()),
        output_dir: PathBuf::from("runs").join(name),
    }
}

/// The shipped experiments. Desk-scale entries train on 500 images per class
/// for 30 epochs; the `-full` entries use all 50k images for 500 epochs.
pub fn builtin_configs() -> Vec<ExperimentConfig> {
    let mut out = vec![
        experiment(
            "shallow-ssim",
            "7x7 SSIM - ReLU - MaxPOOL - 5x5 CONV - ReLU - MaxPOOL - FC",
            shallow(LayerSpec::ssim(32, 7, 1, 3), true),
        ),
        experiment(
            "shallow-conv",
            "7x7 CONV - MaxPOOL - 5x5 CONV - ReLU - MaxPOOL - FC (no ReLU after the first conv)",
            shallow(LayerSpec::conv(32, 7, 1, 3), false),
        ),
        experiment(
            "ssim-norelu",
            "shallow-ssim with the ReLU after the SSIM layer removed",
            shallow(LayerSpec::ssim(32, 7, 1, 3), false),
        ),
        experiment(
            "deep-conv",
            "approximation of the deep paired baseline: three 5x5/32 conv-ReLU-pool stages, then a 5x5/32 conv feature stage",
            deep(LayerSpec::conv(32, 5, 1, 2)),
        ),
        experiment(
            "deep-ssim",
            "approximation of the deep paired SSIM model: three 5x5/32 conv-ReLU-pool stages, then a 5x5/32 SSIM feature stage",
            deep(LayerSpec::ssim(32, 5, 1, 2)),
        ),
    ];
    for base in ["shallow-ssim", "shallow-conv"] {
        let mut full = out.iter().find(|c| c.name == base).cloned().expect("base config");
        full.name = format!("{base}-full");
        full.description = format!("{} (full training set, 500 epochs)", full.description);
        full.train.max_epochs = 500;
        full.data.train_per_class = None;
        full.output_dir = PathBuf::from("runs").join(&full.name);
        out.push(full);
    }
    out
}

pub fn builtin(name: &str) -> Option<ExperimentConfig> {
    builtin_configs().into_iter().find(|c| c.name == name)
}
