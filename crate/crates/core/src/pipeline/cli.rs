//! Command-line front end.
//!
//! Every subcommand starts from the defaults, applies `--config FILE`, then
//! the dedicated flags, then any `--set key=value` overrides.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::config::{RunConfig, Stage};
use super::{run_evaluate, run_finetune, run_pretrain, run_sample, run_sweep, run_synth};
use crate::error::{Error, Result};
use crate::seglosses::SegmentationMetrics;

#[derive(Debug, Parser)]
#[command(name = "diffseg", version, about = "Diffusion-pretrained UNet segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Metrics CSV to append to.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of images.
        #[arg(long)]
        n: Option<usize>,
        /// Image side in pixels.
        #[arg(long)]
        side: Option<usize>,
    },
    /// Diffusion pretraining on the unlabeled split.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Resume from this pretraining checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        checkpoint_out: Option<PathBuf>,
    },
    /// Head swap and supervised fine-tuning.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Pretraining checkpoint to start from.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        checkpoint_out: Option<PathBuf>,
        /// Start from random weights instead of a pretrained backbone.
        #[arg(long)]
        random_init: bool,
    },
    /// Metrics of a segmentation checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also write predicted masks as PNGs.
        #[arg(long)]
        save_predictions: bool,
    },
    /// Draw images from a pretraining checkpoint.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of images.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fine-tune once per value of one config key.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        random_init: bool,
        /// Config key to vary, e.g. `lambda_fl`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

fn base_config(common: &Common, stage: Stage) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.stage = stage;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn apply_data(cfg: &mut RunConfig, data: &DataArgs) {
    if let Some(m) = &data.manifest {
        cfg.manifest = Some(m.clone());
    }
    if data.epochs.is_some() {
        cfg.epochs = data.epochs;
    }
    if let Some(m) = &data.metrics {
        cfg.metrics_csv = Some(m.clone());
    }
}

fn apply_overrides(cfg: &mut RunConfig, common: &Common) -> Result<()> {
    for kv in &common.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::ConfigKey {
            key: kv.clone(),
            detail: "override must be key=value".into(),
        })?;
        cfg.set(k.trim(), v)?;
    }
    Ok(())
}

fn metrics_line(m: &SegmentationMetrics) -> String {
    format!(
        "accuracy={:.6} precision={:.6} recall={:.6} f1={:.6}",
        m.accuracy, m.precision, m.recall, m.f1
    )
}

/// Builds the effective config for a parsed command.
pub fn resolve(command: &Command) -> Result<RunConfig> {
    let mut cfg;
    match command {
        Command::Synth { common, n, side } => {
            cfg = base_config(common, Stage::Synth)?;
            if let Some(n) = n {
                cfg.synth_n = *n;
            }
            if let Some(s) = side {
                cfg.synth_side = *s;
            }
            apply_overrides(&mut cfg, common)?;
        }
        Command::Pretrain { common, data, resume, checkpoint_out } => {
            cfg = base_config(common, Stage::Pretrain)?;
            apply_data(&mut cfg, data);
            if resume.is_some() {
                cfg.checkpoint_in = resume.clone();
            }
            if checkpoint_out.is_some() {
                cfg.checkpoint_out = checkpoint_out.clone();
            }
            apply_overrides(&mut cfg, common)?;
        }
        Command::Finetune { common, data, checkpoint, checkpoint_out, random_init } => {
            cfg = base_config(common, Stage::Finetune)?;
            apply_data(&mut cfg, data);
            if checkpoint.is_some() {
                cfg.checkpoint_in = checkpoint.clone();
            }
            if checkpoint_out.is_some() {
                cfg.checkpoint_out = checkpoint_out.clone();
            }
            cfg.random_init |= random_init;
            apply_overrides(&mut cfg, common)?;
        }
        Command::Evaluate { common, data, checkpoint, save_predictions } => {
            cfg = base_config(common, Stage::Evaluate)?;
            apply_data(&mut cfg, data);
            if checkpoint.is_some() {
                cfg.checkpoint_in = checkpoint.clone();
            }
            cfg.save_predictions |= save_predictions;
            apply_overrides(&mut cfg, common)?;
        }
        Command::Sample { common, checkpoint, n } => {
            cfg = base_config(common, Stage::Sample)?;
            if checkpoint.is_some() {
                cfg.checkpoint_in = checkpoint.clone();
            }
            if let Some(n) = n {
                cfg.samples = *n;
            }
            apply_overrides(&mut cfg, common)?;
        }
        Command::Sweep { common, data, checkpoint, random_init, param, .. } => {
            cfg = base_config(common, Stage::Finetune)?;
            apply_data(&mut cfg, data);
            if checkpoint.is_some() {
                cfg.checkpoint_in = checkpoint.clone();
            }
            cfg.random_init |= random_init;
            apply_overrides(&mut cfg, common)?;
            // reject an unknown sweep key before any training
            cfg.get(param)?;
        }
    }
    Ok(cfg)
}

/// Runs a parsed command, returning the lines to print on success.
pub fn execute(command: &Command) -> Result<Vec<String>> {
    let cfg = resolve(command)?;
    Ok(match command {
        Command::Synth { .. } => {
            let m = run_synth(&cfg)?;
            vec![format!(
                "wrote {} images to {} ({} unlabeled, {} train, {} val, {} test)",
                m.entries.len(),
                cfg.out_dir.display(),
                m.count(crate::data::SplitTag::Unlabeled),
                m.count(crate::data::SplitTag::Train),
                m.count(crate::data::SplitTag::Val),
                m.count(crate::data::SplitTag::Test),
            )]
        }
        Command::Pretrain { .. } => run_pretrain(&cfg)?
            .epoch_losses
            .iter()
            .map(|(e, l)| format!("epoch {e} mean_loss={l:.6}"))
            .collect(),
        Command::Finetune { .. } => {
            let o = run_finetune(&cfg)?;
            vec![format!("best_epoch={} {}", o.best_epoch, metrics_line(&o.test_metrics))]
        }
        Command::Evaluate { .. } => vec![metrics_line(&run_evaluate(&cfg)?)],
        Command::Sample { .. } => run_sample(&cfg)?.iter().map(|p| p.display().to_string()).collect(),
        Command::Sweep { param, values, .. } => run_sweep(&cfg, param, values)?
            .iter()
            .map(|(v, m)| format!("{param}={v} {}", metrics_line(m)))
            .collect(),
    })
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::ConfigKey { .. } | Error::Usage(_) => 2,
        _ => 1,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) | Error::ConfigKey { .. } => "config",
        Error::Usage(_) => "usage",
        Error::Data(_) | Error::Format { .. } | Error::Image(_) | Error::Csv(_) => "data",
        Error::Io(_) => "io",
        _ => "internal",
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code: 0 on success, 2 for usage or config errors, 1 otherwise.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli.command) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", error_kind(&e));
            exit_code(&e)
        }
    }
}
