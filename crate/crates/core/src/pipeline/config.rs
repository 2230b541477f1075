//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is listed
//! in [`RunConfig::KEYS`]; anything else is rejected with the key named.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::SplitFractions;
use crate::error::{Error, Result};
use crate::schedule::ScheduleParams;
use crate::seglosses::{LossKind, MultiLossConfig};
use crate::unet::{HeadScope, UNetConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Pretrain,
    Finetune,
    Evaluate,
    Sample,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Synth => "synth",
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
            Stage::Evaluate => "evaluate",
            Stage::Sample => "sample",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "synth" => Stage::Synth,
            "pretrain" => Stage::Pretrain,
            "finetune" => Stage::Finetune,
            "evaluate" => Stage::Evaluate,
            "sample" => Stage::Sample,
            other => return Err(Error::Config(format!("unknown stage `{other}`"))),
        })
    }
}

/// Split on which the best fine-tuning epoch is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    /// Best macro-F1 on the test split.
    #[default]
    Test,
    /// Best macro-F1 on the validation split; the test split is only
    /// evaluated once at the end.
    Val,
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Selection::Test => "test",
            Selection::Val => "val",
        })
    }
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test" => Ok(Selection::Test),
            "val" => Ok(Selection::Val),
            other => Err(Error::Config(format!("unknown selection `{other}` (expected test or val)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub stage: Stage,
    pub run_id: String,
    pub seed: u64,

    pub preset: String,
    pub in_channels: usize,
    pub num_classes: usize,
    pub head_scope: HeadScope,

    pub schedule: ScheduleParams,

    pub loss: LossKind,
    pub losses: MultiLossConfig,

    pub lr: f64,
    pub batch_size: usize,
    /// `None` means the stage default (100 for pretraining, 150 for fine-tuning).
    pub epochs: Option<usize>,
    pub augment: bool,
    pub random_init: bool,
    pub selection: Selection,

    pub manifest: Option<PathBuf>,
    pub checkpoint_in: Option<PathBuf>,
    pub checkpoint_out: Option<PathBuf>,
    pub metrics_csv: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub keep_epoch_checkpoints: bool,
    pub save_predictions: bool,

    pub samples: usize,
    pub sample_size: usize,

    pub synth_n: usize,
    pub synth_side: usize,
    pub fractions: SplitFractions,
    pub patch_size: usize,
    pub stride: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Pretrain,
            run_id: "run".into(),
            seed: 0,
            preset: "small".into(),
            in_channels: 3,
            num_classes: 3,
            head_scope: HeadScope::Projection,
            schedule: ScheduleParams::default(),
            loss: LossKind::SsFocal,
            losses: MultiLossConfig::default(),
            lr: 1e-4,
            batch_size: 8,
            epochs: None,
            augment: true,
            random_init: false,
            selection: Selection::Test,
            manifest: None,
            checkpoint_in: None,
            checkpoint_out: None,
            metrics_csv: None,
            out_dir: PathBuf::from("out"),
            keep_epoch_checkpoints: true,
            save_predictions: false,
            samples: 4,
            sample_size: 64,
            synth_n: 50,
            synth_side: 64,
            fractions: SplitFractions { unlabeled: 0.6, train: 0.3, val: 0.0, test: 0.1 },
            patch_size: 64,
            stride: 64,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::ConfigKey {
        key: key.to_string(),
        detail: format!("cannot parse `{value}`"),
    })
}

fn parse_with<T>(key: &str, value: &str, f: impl FnOnce(&str) -> Result<T>) -> Result<T> {
    f(value).map_err(|e| Error::ConfigKey { key: key.to_string(), detail: e.to_string() })
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty() && value != "-").then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or("-".into(), |p| p.display().to_string())
}

impl RunConfig {
    /// Every accepted key, in the order written by [`RunConfig::to_text`].
    pub const KEYS: &'static [&'static str] = &[
        "stage", "run_id", "seed", "preset", "in_channels", "num_classes", "head_scope", "timesteps",
        "beta_start", "beta_end", "p2_k", "p2_gamma", "loss", "lambda_fl", "c1", "beta_frac", "gamma_fl",
        "weighting_mode", "emax_scope", "lr", "batch_size", "epochs", "augment", "random_init", "selection",
        "manifest", "checkpoint_in", "checkpoint_out", "metrics_csv", "out_dir", "keep_epoch_checkpoints",
        "save_predictions", "samples", "sample_size", "synth_n", "synth_side", "frac_unlabeled", "frac_train",
        "frac_val", "frac_test", "patch_size", "stride",
    ];

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "stage" => self.stage = parse_with(key, v, str::parse)?,
            "run_id" => self.run_id = v.to_string(),
            "seed" => self.seed = parse_value(key, v)?,
            "preset" => self.preset = v.to_string(),
            "in_channels" => self.in_channels = parse_value(key, v)?,
            "num_classes" => self.num_classes = parse_value(key, v)?,
            "head_scope" => self.head_scope = parse_with(key, v, str::parse)?,
            "timesteps" => self.schedule.timesteps = parse_value(key, v)?,
            "beta_start" => self.schedule.beta_start = parse_value(key, v)?,
            "beta_end" => self.schedule.beta_end = parse_value(key, v)?,
            "p2_k" => self.schedule.p2_k = parse_value(key, v)?,
            "p2_gamma" => self.schedule.p2_gamma = parse_value(key, v)?,
            "loss" => self.loss = parse_with(key, v, str::parse)?,
            "lambda_fl" => self.losses.lambda_fl = parse_value(key, v)?,
            "c1" => self.losses.ss.c1 = parse_value(key, v)?,
            "beta_frac" => self.losses.ss.beta_frac = parse_value(key, v)?,
            "gamma_fl" => self.losses.fl.gamma_fl = parse_value(key, v)?,
            "weighting_mode" => self.losses.ss.weighting_mode = parse_with(key, v, str::parse)?,
            "emax_scope" => self.losses.ss.max_scope = parse_with(key, v, str::parse)?,
            "lr" => self.lr = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "epochs" => self.epochs = if v == "-" { None } else { Some(parse_value(key, v)?) },
            "augment" => self.augment = parse_value(key, v)?,
            "random_init" => self.random_init = parse_value(key, v)?,
            "selection" => self.selection = parse_with(key, v, str::parse)?,
            "manifest" => self.manifest = optional_path(v),
            "checkpoint_in" => self.checkpoint_in = optional_path(v),
            "checkpoint_out" => self.checkpoint_out = optional_path(v),
            "metrics_csv" => self.metrics_csv = optional_path(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "keep_epoch_checkpoints" => self.keep_epoch_checkpoints = parse_value(key, v)?,
            "save_predictions" => self.save_predictions = parse_value(key, v)?,
            "samples" => self.samples = parse_value(key, v)?,
            "sample_size" => self.sample_size = parse_value(key, v)?,
            "synth_n" => self.synth_n = parse_value(key, v)?,
            "synth_side" => self.synth_side = parse_value(key, v)?,
            "frac_unlabeled" => self.fractions.unlabeled = parse_value(key, v)?,
            "frac_train" => self.fractions.train = parse_value(key, v)?,
            "frac_val" => self.fractions.val = parse_value(key, v)?,
            "frac_test" => self.fractions.test = parse_value(key, v)?,
            "patch_size" => self.patch_size = parse_value(key, v)?,
            "stride" => self.stride = parse_value(key, v)?,
            other => {
                return Err(Error::ConfigKey { key: other.to_string(), detail: "unknown key".into() })
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::ConfigKey {
                key: line.to_string(),
                detail: format!("line {} is not `key = value`", no + 1),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Value of `key` as it would be written to a config file.
    pub fn get(&self, key: &str) -> Result<String> {
        let s = &self.schedule;
        let l = &self.losses;
        Ok(match key {
            "stage" => self.stage.to_string(),
            "run_id" => self.run_id.clone(),
            "seed" => self.seed.to_string(),
            "preset" => self.preset.clone(),
            "in_channels" => self.in_channels.to_string(),
            "num_classes" => self.num_classes.to_string(),
            "head_scope" => self.head_scope.to_string(),
            "timesteps" => s.timesteps.to_string(),
            "beta_start" => s.beta_start.to_string(),
            "beta_end" => s.beta_end.to_string(),
            "p2_k" => s.p2_k.to_string(),
            "p2_gamma" => s.p2_gamma.to_string(),
            "loss" => self.loss.to_string(),
            "lambda_fl" => l.lambda_fl.to_string(),
            "c1" => l.ss.c1.to_string(),
            "beta_frac" => l.ss.beta_frac.to_string(),
            "gamma_fl" => l.fl.gamma_fl.to_string(),
            "weighting_mode" => l.ss.weighting_mode.to_string(),
            "emax_scope" => l.ss.max_scope.to_string(),
            "lr" => self.lr.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.map_or("-".into(), |e| e.to_string()),
            "augment" => self.augment.to_string(),
            "random_init" => self.random_init.to_string(),
            "selection" => self.selection.to_string(),
            "manifest" => show_path(&self.manifest),
            "checkpoint_in" => show_path(&self.checkpoint_in),
            "checkpoint_out" => show_path(&self.checkpoint_out),
            "metrics_csv" => show_path(&self.metrics_csv),
            "out_dir" => self.out_dir.display().to_string(),
            "keep_epoch_checkpoints" => self.keep_epoch_checkpoints.to_string(),
            "save_predictions" => self.save_predictions.to_string(),
            "samples" => self.samples.to_string(),
            "sample_size" => self.sample_size.to_string(),
            "synth_n" => self.synth_n.to_string(),
            "synth_side" => self.synth_side.to_string(),
            "frac_unlabeled" => self.fractions.unlabeled.to_string(),
            "frac_train" => self.fractions.train.to_string(),
            "frac_val" => self.fractions.val.to_string(),
            "frac_test" => self.fractions.test.to_string(),
            "patch_size" => self.patch_size.to_string(),
            "stride" => self.stride.to_string(),
            other => return Err(Error::ConfigKey { key: other.to_string(), detail: "unknown key".into() }),
        })
    }

    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn epochs_for(&self, stage: Stage) -> usize {
        self.epochs.unwrap_or(match stage {
            Stage::Finetune => 150,
            _ => 100,
        })
    }

    pub fn model_config(&self) -> Result<UNetConfig> {
        let mut c = UNetConfig::preset(&self.preset, self.in_channels, self.num_classes)?;
        c.head_scope = self.head_scope;
        Ok(c)
    }

    /// Checks the invariants that every stage relies on.
    pub fn validate(&self) -> Result<()> {
        let key_err = |key: &str, detail: String| Err(Error::ConfigKey { key: key.into(), detail });
        if self.batch_size == 0 {
            return key_err("batch_size", "must be at least 1".into());
        }
        if self.epochs == Some(0) {
            return key_err("epochs", "must be at least 1".into());
        }
        if !(self.lr > 0.0) {
            return key_err("lr", format!("must be positive, got {}", self.lr));
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\', ',']) {
            return key_err("run_id", format!("`{}` is not a plain name", self.run_id));
        }
        self.schedule.build()?;
        self.losses.validate()?;
        self.fractions.validate()?;
        self.model_config()?;
        Ok(())
    }

    pub(crate) fn require_manifest(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| Error::ConfigKey { key: "manifest".into(), detail: format!("required for {}", self.stage) })
    }

    pub(crate) fn require_checkpoint_in(&self) -> Result<&Path> {
        self.checkpoint_in.as_deref().ok_or_else(|| Error::ConfigKey {
            key: "checkpoint_in".into(),
            detail: format!("required for {}", self.stage),
        })
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_text() {
        let mut c = RunConfig::default();
        c.set("lambda_fl", "0.5").unwrap();
        c.set("manifest", "d/manifest.tsv").unwrap();
        c.set("epochs", "3").unwrap();
        c.set("weighting_mode", "scalar").unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("lr = 0.1\nlearning_rate = 3\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
        let err = RunConfig::parse("batch_size = eight").unwrap_err();
        assert!(err.to_string().contains("batch_size"), "{err}");
        assert!(RunConfig::parse("no equals sign").is_err());
    }

    #[test]
    fn validation() {
        assert!(RunConfig::parse("batch_size = 0").unwrap().validate().is_err());
        assert!(RunConfig::parse("lr = 0").unwrap().validate().is_err());
        assert!(RunConfig::parse("preset = huge").unwrap().validate().is_err());
        RunConfig::default().validate().unwrap();
    }
}
