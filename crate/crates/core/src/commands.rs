//! The operations behind each CLI subcommand, usable as a library.
//!
//! A training run writes into its output directory:
//!
//! | file             | contents                                                |
//! |------------------|---------------------------------------------------------|
//! | `config.txt`     | the effective experiment config                         |
//! | `norm_stats.txt` | per-channel mean and std of the training subset         |
//! | `metrics.csv`    | `epoch,train_loss,train_acc,val_loss,val_acc` per epoch |
//! | `timing.csv`     | `epoch,wall_seconds` per epoch                          |
//! | `best.ckpt`      | weights at the highest validation accuracy              |
//! | `last.ckpt`      | weights after the final epoch                           |
//!
//! `metrics.csv` depends only on the config, so two runs with the same seed
//! produce identical bytes. Wall-clock times live in `timing.csv` for that
//! reason. Every CSV starts with a `# key=value` comment line naming the
//! config fingerprint.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::adversarial::{robustness_sweep, AttackConfig, RobustnessReport};
use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::data::{load_split, DatasetSplit, NormStats, SplitRole};
use crate::error::{Error, Result};
use crate::export::{export_layer, Rgb8};
use crate::model::Network;
use crate::optim::{evaluate, train_epoch, EvalMetrics, OptimizerState};

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const NORM_FILE: &str = "norm_stats.txt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";
pub const ROBUSTNESS_HEADER: &str = "model_id,split,epsilon,top1,top5";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.train_loss, self.train_acc, self.val_loss, self.val_acc
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

impl TrainOutcome {
    pub fn final_train_acc(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.train_acc)
    }
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

fn write_line(file: &mut File, path: &Path, line: &str) -> Result<()> {
    writeln!(file, "{line}")
        .and_then(|_| file.flush())
        .map_err(|e| Error::io(path, e))
}

fn load_role(cfg: &ExperimentConfig, role: SplitRole, per_class: Option<usize>) -> Result<DatasetSplit> {
    load_split(&cfg.data.dir, role, per_class, cfg.data.subset_seed)
}

fn default_per_class(cfg: &ExperimentConfig, role: SplitRole) -> Option<usize> {
    match role {
        SplitRole::Train => cfg.data.train_per_class,
        SplitRole::Validation => cfg.data.val_per_class,
    }
}

/// Trains `cfg` from scratch into `cfg.output_dir`. `progress` sees each
/// epoch as it completes.
pub fn train(cfg: &ExperimentConfig, mut progress: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let raw_train = load_role(cfg, SplitRole::Train, cfg.data.train_per_class)?;
    let raw_val = load_role(cfg, SplitRole::Validation, cfg.data.val_per_class)?;
    let norm = NormStats::from_split(&raw_train)?;
    let train_set = raw_train.into_normalized(&norm)?;
    let val_set = raw_val.into_normalized(&norm)?;

    cfg.save(out.join(CONFIG_FILE))?;
    norm.save(out.join(NORM_FILE))?;
    let fingerprint = cfg.fingerprint();
    let meta = format!("# fingerprint={fingerprint} model_id={}", cfg.name);
    let metrics_path = out.join(METRICS_FILE);
    let timing_path = out.join(TIMING_FILE);
    let mut metrics = create(&metrics_path)?;
    let mut timing = create(&timing_path)?;
    write_line(&mut metrics, &metrics_path, &meta)?;
    write_line(&mut metrics, &metrics_path, METRICS_HEADER)?;
    write_line(&mut timing, &timing_path, &meta)?;
    write_line(&mut timing, &timing_path, "epoch,wall_seconds")?;

    let mut model = Network::new(&cfg.model, cfg.ssim, cfg.train.seed)?;
    let mut state = OptimizerState::new(&model);
    let mut records = Vec::with_capacity(cfg.train.max_epochs);
    let (mut best_epoch, mut best_val) = (0, f64::NEG_INFINITY);
    for epoch in 0..cfg.train.max_epochs {
        let started = Instant::now();
        let tr = train_epoch(&mut model, &mut state, &train_set, &cfg.train, epoch)?;
        let va = evaluate(&mut model, &val_set, cfg.train.batch_size)?;
        let rec = EpochRecord {
            epoch: epoch + 1,
            train_loss: tr.loss,
            train_acc: tr.accuracy,
            val_loss: va.loss,
            val_acc: va.top1,
        };
        write_line(&mut metrics, &metrics_path, &rec.csv_row())?;
        write_line(
            &mut timing,
            &timing_path,
            &format!("{},{:.3}", rec.epoch, started.elapsed().as_secs_f64()),
        )?;
        if rec.val_acc > best_val {
            best_val = rec.val_acc;
            best_epoch = rec.epoch;
            Checkpoint::capture(&model, &state, &fingerprint, rec.epoch as u64, best_val)?
                .save(out.join(BEST_CHECKPOINT))?;
        }
        progress(&rec);
        records.push(rec);
    }
    Checkpoint::capture(&model, &state, &fingerprint, records.len() as u64, best_val.max(0.0))?
        .save(out.join(LAST_CHECKPOINT))?;
    Ok(TrainOutcome {
        out_dir: out,
        epochs: records,
        best_epoch,
        best_val_acc: best_val,
    })
}

/// A checkpoint restored under a config whose fingerprint it matches,
/// together with the normalization statistics saved next to it.
pub struct LoadedModel {
    pub model: Network,
    pub norm: NormStats,
    pub checkpoint: Checkpoint,
}

pub fn load_model(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<LoadedModel> {
    let ck = Checkpoint::load(checkpoint)?;
    let expected = cfg.fingerprint();
    if ck.fingerprint != expected {
        return Err(Error::Config(format!(
            "{} was trained under config fingerprint {}, but {} has fingerprint {expected}",
            checkpoint.display(),
            ck.fingerprint,
            cfg.name
        )));
    }
    let mut model = Network::new(&cfg.model, cfg.ssim, cfg.train.seed)?;
    ck.restore(&mut model, None)?;
    let norm = NormStats::load(sibling(checkpoint, NORM_FILE))?;
    Ok(LoadedModel {
        model,
        norm,
        checkpoint: ck,
    })
}

/// `name` in the directory holding `path`.
pub fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

/// Loads and normalizes one split. `per_class` overrides the config subset.
pub fn prepared_split(
    cfg: &ExperimentConfig,
    role: SplitRole,
    per_class: Option<usize>,
    norm: &NormStats,
) -> Result<DatasetSplit> {
    let k = per_class.or(default_per_class(cfg, role));
    load_role(cfg, role, k)?.into_normalized(norm)
}

/// Clean loss and TOP-1 / TOP-5 accuracy of a checkpoint on one split.
pub fn eval(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    role: SplitRole,
    per_class: Option<usize>,
) -> Result<EvalMetrics> {
    let mut loaded = load_model(cfg, checkpoint)?;
    let data = prepared_split(cfg, role, per_class, &loaded.norm)?;
    evaluate(&mut loaded.model, &data, cfg.train.batch_size)
}

/// Runs the FGSM sweep on the requested splits and writes `robustness.csv`
/// into `out_dir`.
pub fn attack(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    attack: &AttackConfig,
    roles: &[SplitRole],
    per_class: Option<usize>,
    out_dir: &Path,
) -> Result<RobustnessReport> {
    attack.validate()?;
    if roles.is_empty() {
        return Err(Error::Usage("attack needs at least one split".into()));
    }
    let loaded = load_model(cfg, checkpoint)?;
    let splits = roles
        .iter()
        .map(|&r| prepared_split(cfg, r, per_class, &loaded.norm))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&DatasetSplit> = splits.iter().collect();
    let report = robustness_sweep(
        &loaded.model,
        &refs,
        attack,
        Some(&loaded.norm),
        cfg.train.batch_size,
    )?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("robustness.csv");
    let mut text = format!(
        "# fingerprint={} model_id={} epsilon_domain={}\n{ROBUSTNESS_HEADER}\n",
        loaded.checkpoint.fingerprint, cfg.name, report.domain
    );
    for row in &report.rows {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            cfg.name, row.split, row.epsilon, row.top1, row.top5
        ));
    }
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

/// Writes the filter grid and norms of model layer `layer` into `out_dir`.
pub fn export_filters(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    layer: usize,
    out_dir: &Path,
) -> Result<(Rgb8, Vec<f64>)> {
    let loaded = load_model(cfg, checkpoint)?;
    export_layer(&loaded.model, layer, out_dir)
}

/// Parses the data rows of a `metrics.csv`.
pub fn read_metrics(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let mut rows = text.lines().filter(|l| !l.starts_with('#'));
    if rows.next() != Some(METRICS_HEADER) {
        return Err(bad("missing metrics header".into()));
    }
    rows.map(|line| {
        let f: Vec<&str> = line.split(',').collect();
        let num = |i: usize| -> Result<f64> {
            f.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(format!("bad row {line:?}")))
        };
        if f.len() != 5 {
            return Err(bad(format!("bad row {line:?}")));
        }
        Ok(EpochRecord {
            epoch: f[0].parse().map_err(|_| bad(format!("bad epoch in {line:?}")))?,
            train_loss: num(1)?,
            train_acc: num(2)?,
            val_loss: num(3)?,
            val_acc: num(4)?,
        })
    })
    .collect()
}
