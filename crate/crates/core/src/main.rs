use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ssimnet::adversarial::AttackConfig;
use ssimnet::commands::{self, sibling, CONFIG_FILE};
use ssimnet::config::{builtin, builtin_configs, parse_epsilons, ExperimentConfig};
use ssimnet::data::SplitRole;
use ssimnet::{Error, Result};

#[derive(Parser)]
#[command(name = "ssimnet", version, about = "Train, evaluate and attack SSIM-layer networks on CIFAR-10")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from scratch.
    Train(TrainArgs),
    /// Report clean loss and TOP-1 / TOP-5 accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Run an FGSM epsilon sweep against a checkpoint.
    Attack(AttackArgs),
    /// Write a filter grid image and filter norms for one layer.
    ExportFilters(ExportArgs),
    /// List the built-in experiment configs.
    ListConfigs,
}

#[derive(Args)]
struct TrainArgs {
    /// Config file or built-in config name.
    #[arg(long)]
    config: String,
    /// Overrides the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the number of training images per class (0 = all).
    #[arg(long)]
    subset_per_class: Option<usize>,
    /// Overrides the epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Overrides the CIFAR-10 binary directory.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// Checkpoint file written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Config file or built-in name; defaults to the config.txt beside the checkpoint.
    #[arg(long)]
    config: Option<String>,
    /// Overrides the CIFAR-10 binary directory.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
}

impl From<SplitArg> for SplitRole {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => SplitRole::Train,
            SplitArg::Val => SplitRole::Validation,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "val")]
    split: SplitArg,
    /// Evaluate on a class-balanced subset of this many images per class.
    #[arg(long)]
    subset_per_class: Option<usize>,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated epsilons; defaults to the config's sweep.
    #[arg(long)]
    epsilons: Option<String>,
    /// Attack one split only; both by default.
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Attack a class-balanced subset of this many images per class.
    #[arg(long)]
    subset_per_class: Option<usize>,
    /// Directory for robustness.csv; defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Model layer index (0-based).
    #[arg(long, default_value_t = 0)]
    layer: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve_config(name: &str) -> Result<ExperimentConfig> {
    let path = Path::new(name);
    if path.exists() {
        return ExperimentConfig::load(path);
    }
    builtin(name).ok_or_else(|| {
        let known: Vec<String> = builtin_configs().into_iter().map(|c| c.name).collect();
        Error::Usage(format!(
            "{name:?} is neither a config file nor a built-in config ({})",
            known.join(", ")
        ))
    })
}

fn per_class(v: Option<usize>) -> Option<Option<usize>> {
    v.map(|k| Some(k).filter(|&k| k > 0))
}

impl ModelArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(name) => resolve_config(name)?,
            None => ExperimentConfig::load(sibling(&self.checkpoint, CONFIG_FILE))?,
        };
        if let Some(d) = &self.data {
            cfg.data.dir = d.clone();
        }
        Ok(cfg)
    }

    fn out_dir(&self, out: Option<&PathBuf>) -> PathBuf {
        out.cloned().unwrap_or_else(|| sibling(&self.checkpoint, ""))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let mut cfg = resolve_config(&a.config)?;
            if let Some(s) = a.seed {
                cfg.train.seed = s;
            }
            if let Some(o) = a.out {
                cfg.output_dir = o;
            }
            if let Some(k) = per_class(a.subset_per_class) {
                cfg.data.train_per_class = k;
            }
            if let Some(e) = a.epochs {
                cfg.train.max_epochs = e;
            }
            if let Some(d) = a.data {
                cfg.data.dir = d;
            }
            eprintln!("training {} into {}", cfg.name, cfg.output_dir.display());
            let outcome = commands::train(&cfg, |r| {
                eprintln!(
                    "epoch {:>3}  train loss {:.4} acc {:.4}  val loss {:.4} acc {:.4}",
                    r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
                )
            })?;
            println!(
                "best val acc {:.4} at epoch {}; final train acc {:.4}",
                outcome.best_val_acc,
                outcome.best_epoch,
                outcome.final_train_acc()
            );
        }
        Command::Eval(a) => {
            let cfg = a.model.config()?;
            let role = SplitRole::from(a.split);
            let m = commands::eval(&cfg, &a.model.checkpoint, role, per_class(a.subset_per_class).flatten())?;
            println!("split,samples,loss,top1,top5");
            println!("{},{},{},{},{}", role.name(), m.samples, m.loss, m.top1, m.top5);
        }
        Command::Attack(a) => {
            let cfg = a.model.config()?;
            let mut attack = cfg.attack.clone().unwrap_or_else(AttackConfig::default);
            if let Some(e) = &a.epsilons {
                attack.epsilons = parse_epsilons(e)?;
            }
            let roles = match a.split {
                Some(s) => vec![s.into()],
                None => vec![SplitRole::Train, SplitRole::Validation],
            };
            let out = a.model.out_dir(a.out.as_ref());
            let report = commands::attack(
                &cfg,
                &a.model.checkpoint,
                &attack,
                &roles,
                per_class(a.subset_per_class).flatten(),
                &out,
            )?;
            println!("{}", commands::ROBUSTNESS_HEADER);
            for r in &report.rows {
                println!("{},{},{},{},{}", cfg.name, r.split, r.epsilon, r.top1, r.top5);
            }
            eprintln!("wrote {}", out.join("robustness.csv").display());
        }
        Command::ExportFilters(a) => {
            let cfg = a.model.config()?;
            let out = a.model.out_dir(a.out.as_ref());
            let (grid, norms) = commands::export_filters(&cfg, &a.model.checkpoint, a.layer, &out)?;
            println!(
                "{} filters, {}x{} grid written to {}",
                norms.len(),
                grid.width,
                grid.height,
                out.display()
            );
        }
        Command::ListConfigs => {
            for c in builtin_configs() {
                println!("{:<18} {}", c.name, c.description);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
