//! Deterministic evaluation over labeled patches.

use std::path::PathBuf;

use log::info;

use super::config::RunConfig;
use super::state::{head_mode_of, load_model};
use crate::data::io::save_mask;
use crate::data::{load_split, stack_images, stack_masks, DatasetManifest, IndexMask, Patch, SplitTag};
use crate::error::{Error, Result};
use crate::gradcore::checkpoint::CheckpointFile;
use crate::gradcore::{no_grad, Tensor};
use crate::seglosses::{argmax_channels, write_metrics_csv, ConfusionMatrix, SegmentationMetrics};
use crate::unet::{HeadMode, UNetModel};

/// Anything that maps an image batch `[N, C, H, W]` to per-pixel class
/// probabilities `[N, K, H, W]`.
pub trait Segmenter {
    fn predict_probs(&self, images: &Tensor) -> Result<Tensor>;
}

impl Segmenter for UNetModel {
    fn predict_probs(&self, images: &Tensor) -> Result<Tensor> {
        self.segment(images)
    }
}

fn batches<'a>(patches: &'a [Patch], batch: usize) -> impl Iterator<Item = &'a [Patch]> {
    patches.chunks(batch.max(1))
}

/// Accumulates a confusion matrix over `patches` (no augmentation, no
/// gradient recording) and returns macro metrics.
pub fn evaluate_patches<S: Segmenter + ?Sized>(
    model: &S,
    patches: &[Patch],
    num_classes: usize,
    batch: usize,
) -> Result<SegmentationMetrics> {
    let mut cm = ConfusionMatrix::new(num_classes);
    no_grad(|| -> Result<()> {
        for chunk in batches(patches, batch) {
            let x = stack_images(&chunk.iter().map(|p| &p.image).collect::<Vec<_>>())?;
            let masks = chunk
                .iter()
                .map(|p| p.mask.as_ref().ok_or_else(|| Error::Data(format!("{} has no mask", p.provenance.source))))
                .collect::<Result<Vec<_>>>()?;
            let y = stack_masks(&masks, num_classes)?;
            cm.add_batch(&y, &model.predict_probs(&x)?)?;
        }
        Ok(())
    })?;
    Ok(cm.metrics())
}

/// Predicted index masks for `patches`.
pub fn predict_masks<S: Segmenter + ?Sized>(model: &S, patches: &[Patch], batch: usize) -> Result<Vec<IndexMask>> {
    let mut out = Vec::with_capacity(patches.len());
    no_grad(|| -> Result<()> {
        for chunk in batches(patches, batch) {
            let x = stack_images(&chunk.iter().map(|p| &p.image).collect::<Vec<_>>())?;
            let labels = argmax_channels(&model.predict_probs(&x)?)?;
            let (h, w) = (chunk[0].image.height, chunk[0].image.width);
            for m in labels.chunks(h * w) {
                out.push(IndexMask::new(h, w, m.iter().map(|&c| c as u8).collect())?);
            }
        }
        Ok(())
    })?;
    Ok(out)
}

/// Loads a segmentation checkpoint.
pub fn load_segmentation_model(path: &std::path::Path) -> Result<UNetModel> {
    let ck = CheckpointFile::load(path)?;
    if head_mode_of(&ck)? != HeadMode::Segmentation {
        return Err(Error::Usage(format!("{} has no segmentation head; fine-tune it first", path.display())));
    }
    load_model(&ck)
}

/// Evaluates the checkpoint on the test split and appends a metrics row.
/// With `save_predictions`, writes predicted masks as PNGs (class index
/// scaled to the 8-bit range) under `out_dir/predictions`.
pub fn run_evaluate(cfg: &RunConfig) -> Result<SegmentationMetrics> {
    let path = cfg.require_checkpoint_in()?;
    if !path.is_file() {
        return Err(Error::Config(format!("checkpoint {} does not exist", path.display())));
    }
    let model = load_segmentation_model(path)?;
    let manifest = DatasetManifest::load(cfg.require_manifest()?)?;
    let classes = model.config().num_classes;
    if manifest.num_classes != classes {
        return Err(Error::Config(format!(
            "model predicts {classes} classes but the dataset has {}",
            manifest.num_classes
        )));
    }
    let test = load_split(&manifest, SplitTag::Test)?;
    if test.is_empty() {
        return Err(Error::Config("the test split has no patches".into()));
    }
    let metrics = evaluate_patches(&model, &test, classes, cfg.batch_size)?;
    info!(
        "evaluate: accuracy {:.4}, precision {:.4}, recall {:.4}, macro-F1 {:.4}",
        metrics.accuracy, metrics.precision, metrics.recall, metrics.f1
    );
    if let Some(csv) = &cfg.metrics_csv {
        write_metrics_csv(csv, &cfg.run_id, "test", &metrics)?;
    }
    if cfg.save_predictions {
        let dir = cfg.out_dir.join("predictions");
        std::fs::create_dir_all(&dir)?;
        let scale = (255 / (classes - 1).max(1)) as u8;
        for (p, mut m) in test.iter().zip(predict_masks(&model, &test, cfg.batch_size)?) {
            m.data.iter_mut().for_each(|v| *v *= scale);
            let stem = PathBuf::from(&p.provenance.source)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            save_mask(&dir.join(format!("{stem}_r{}_c{}.png", p.provenance.row, p.provenance.col)), &m)?;
        }
    }
    Ok(metrics)
}
