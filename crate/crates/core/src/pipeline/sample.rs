//! Drawing images from a pretrained noise predictor.

use std::path::PathBuf;

use log::info;

use super::config::RunConfig;
use super::state::{head_mode_of, load_model, schedule_from, STREAM_SAMPLE};
use crate::data::io::save_png;
use crate::data::{item_rng, DatasetManifest, ImageBuf, ManifestEntry, SplitTag};
use crate::diffusion::sample;
use crate::error::{Error, Result};
use crate::gradcore::checkpoint::CheckpointFile;
use crate::unet::HeadMode;

/// Writes `samples` PNGs plus a manifest listing them (as unlabeled
/// entries) to `out_dir/samples`. The schedule always comes from the
/// checkpoint.
pub fn run_sample(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let path = cfg.require_checkpoint_in()?;
    let ck = CheckpointFile::load(path)?;
    if head_mode_of(&ck)? != HeadMode::Pretrain {
        return Err(Error::Usage(format!(
            "{} has a segmentation head; sampling needs a pretraining checkpoint",
            path.display()
        )));
    }
    if cfg.samples == 0 {
        return Err(Error::ConfigKey { key: "samples".into(), detail: "must be at least 1".into() });
    }
    let model = load_model(&ck)?;
    let params = schedule_from(&ck)?;
    if params != cfg.schedule {
        log::warn!("sampling with the checkpoint's schedule, which differs from the configured one");
    }
    let schedule = params.build()?;
    let c = model.config().in_channels;
    let side = cfg.sample_size;
    let mut rng = item_rng(cfg.seed, STREAM_SAMPLE);
    info!("drawing {} samples of {side}x{side} over {} steps", cfg.samples, schedule.timesteps());
    let x = sample(&model, cfg.samples, [c, side, side], &schedule, &mut rng)?;
    let data = x.to_vec();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("sampler produced non-finite values".into()));
    }
    let dir = cfg.out_dir.join("samples");
    std::fs::create_dir_all(&dir)?;
    let per = c * side * side;
    let mut files = Vec::with_capacity(cfg.samples);
    let mut entries = Vec::with_capacity(cfg.samples);
    for (i, chunk) in data.chunks(per).enumerate() {
        let name = format!("sample_{i:04}.png");
        let file = dir.join(&name);
        save_png(&file, &ImageBuf::new(c, side, side, chunk.to_vec())?)?;
        entries.push(ManifestEntry { split: SplitTag::Unlabeled, image: PathBuf::from(name), mask: None });
        files.push(file);
    }
    let manifest = DatasetManifest {
        root: dir,
        num_classes: cfg.num_classes.max(2),
        patch_size: side,
        stride: side,
        entries,
        skipped: Vec::new(),
    };
    manifest.save()?;
    Ok(files)
}
