//! The two-stage protocol: synthetic data, diffusion pretraining, head
//! swap and fine-tuning, evaluation and sampling, plus the CLI front end.

pub mod cli;
mod config;
mod eval;
mod plot;
mod sample;
mod state;
mod train;

pub use config::{RunConfig, Selection, Stage};
pub use eval::{evaluate_patches, load_segmentation_model, predict_masks, run_evaluate, Segmenter};
pub use plot::{read_loss_log, svg_plot, write_loss_curve, LossLog};
pub use sample::run_sample;
pub use state::{
    build_checkpoint, epoch_of, head_mode_of, load_adam, load_model, model_metadata, round_to_f32, schedule_from,
    schedule_metadata, stage_of, unet_config_from,
};
pub use train::{
    initial_finetune_model, run_finetune, run_pretrain, run_sweep, EpochRecord, FinetuneOutcome, PretrainOutcome,
};

use crate::data::{write_synth_dataset, DatasetManifest};
use crate::error::Result;

/// Writes `synth_n` synthetic image/mask pairs to `out_dir` and builds the
/// manifest there.
pub fn run_synth(cfg: &RunConfig) -> Result<DatasetManifest> {
    cfg.fractions.validate()?;
    write_synth_dataset(
        &cfg.out_dir,
        cfg.synth_n,
        cfg.synth_side,
        cfg.seed,
        cfg.fractions,
        cfg.patch_size,
        cfg.stride,
    )
}
