//! Pretraining and fine-tuning loops.

use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{RunConfig, Selection, Stage};
use super::eval::evaluate_patches;
use super::plot::{write_loss_curve, LossLog};
use super::state::{
    build_checkpoint, epoch_of, epoch_seed, load_adam, schedule_from, stage_of, unet_config_from, round_to_f32,
    STREAM_FINETUNE, STREAM_HEAD, STREAM_INIT, STREAM_PRETRAIN,
};
use crate::data::{augment, item_rng, load_split, stack_images, stack_masks, DatasetManifest, ImageBuf, Patch, SplitTag};
use crate::diffusion::pretrain_step;
use crate::error::{Error, Result};
use crate::gradcore::checkpoint::CheckpointFile;
use crate::gradcore::{adam_step, AdamState};
use crate::seglosses::{write_metrics_csv, SegmentationMetrics};
use crate::unet::{HeadMode, UNetModel};

#[derive(Debug)]
pub struct PretrainOutcome {
    pub model: UNetModel,
    pub checkpoint: CheckpointFile,
    /// `(epoch, mean loss)` for the epochs run by this call (1-based).
    pub epoch_losses: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Macro metrics on the selection split.
    pub selection_metrics: SegmentationMetrics,
}

#[derive(Debug)]
pub struct FinetuneOutcome {
    /// Model restored to the best epoch.
    pub model: UNetModel,
    pub checkpoint: CheckpointFile,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Test-split metrics of the selected model.
    pub test_metrics: SegmentationMetrics,
}

fn patch_image(p: &Patch, augment_on: bool, seed: u64, index: usize) -> Patch {
    if augment_on {
        augment(p, &mut item_rng(seed, index as u64))
    } else {
        p.clone()
    }
}

fn check_channels(patches: &[Patch], in_channels: usize, split: SplitTag) -> Result<()> {
    match patches.iter().find(|p| p.image.channels != in_channels) {
        Some(p) => Err(Error::Config(format!(
            "{split} patch from {} has {} channels but the model expects {in_channels}",
            p.provenance.source, p.image.channels
        ))),
        None => Ok(()),
    }
}

fn load_nonempty(manifest: &DatasetManifest, split: SplitTag) -> Result<Vec<Patch>> {
    let patches = load_split(manifest, split)?;
    if patches.is_empty() {
        return Err(Error::Config(format!("the {split} split has no patches")));
    }
    Ok(patches)
}

fn save_checkpoint(ck: &CheckpointFile, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    ck.save(path)
}

fn run_meta(cfg: &RunConfig, stream: u64, next_epoch: usize) -> Vec<(String, String)> {
    vec![
        ("run_id".into(), cfg.run_id.clone()),
        ("seed".into(), cfg.seed.to_string()),
        ("rng.next_epoch".into(), format!("{:016x}", epoch_seed(cfg.seed, stream, next_epoch))),
    ]
}

pub(crate) fn loss_log_path(cfg: &RunConfig, stage: &str) -> PathBuf {
    cfg.out_dir.join(format!("{}_{stage}_loss.csv", cfg.run_id))
}

/// Trains the noise predictor on the unlabeled split. When `checkpoint_in`
/// names a pretraining checkpoint the run resumes after its epoch.
pub fn run_pretrain(cfg: &RunConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(cfg.require_manifest()?)?;
    let patches = load_split(&manifest, SplitTag::Unlabeled)?;
    if patches.is_empty() {
        return Err(Error::Config("pretraining needs unlabeled patches but the unlabeled split is empty".into()));
    }
    check_channels(&patches, cfg.in_channels, SplitTag::Unlabeled)?;
    let schedule = cfg.schedule.build()?;

    let (model, mut adam, start) = match &cfg.checkpoint_in {
        Some(path) => {
            let ck = CheckpointFile::load(path)?;
            if stage_of(&ck)? != "pretrain" {
                return Err(Error::Usage(format!("{} is not a pretraining checkpoint", path.display())));
            }
            if schedule_from(&ck)? != cfg.schedule {
                return Err(Error::Config(format!("schedule in {} differs from the configured one", path.display())));
            }
            let model = super::state::load_model(&ck)?;
            let adam = load_adam(&ck, &model)?.unwrap_or_else(|| AdamState::new(&model.parameters()));
            let start = epoch_of(&ck)?;
            info!("resuming pretraining from epoch {start}");
            (model, adam, start)
        }
        None => {
            let model = UNetModel::new(cfg.model_config()?, &mut item_rng(cfg.seed, STREAM_INIT))?;
            let adam = AdamState::new(&model.parameters());
            (model, adam, 0)
        }
    };
    let epochs = cfg.epochs_for(Stage::Pretrain);
    let params = model.parameters();
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut log = LossLog::open(&loss_log_path(cfg, "pretrain"), &["epoch", "mean_loss"], start == 0)?;

    let mut epoch_losses = Vec::new();
    let mut checkpoint = None;
    for epoch in start..epochs {
        let seed = epoch_seed(cfg.seed, STREAM_PRETRAIN, epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..patches.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let imgs: Vec<ImageBuf> =
                chunk.iter().map(|&i| patch_image(&patches[i], cfg.augment, seed, i).image).collect();
            let x = stack_images(&imgs.iter().collect::<Vec<_>>())?;
            model.zero_grad();
            let loss = pretrain_step(&model, &x, &schedule, &mut rng)?;
            adam_step(&params, &mut adam, cfg.lr)?;
            total += loss * chunk.len() as f64;
        }
        let mean = total / patches.len() as f64;
        round_to_f32(&model, Some(&mut adam));
        info!("pretrain epoch {}/{epochs}: mean loss {mean:.6}", epoch + 1);
        epoch_losses.push((epoch + 1, mean));
        log.append(&[(epoch + 1) as f64, mean])?;

        let ck = build_checkpoint(
            &model,
            &cfg.schedule,
            "pretrain",
            epoch + 1,
            Some(&adam),
            run_meta(cfg, STREAM_PRETRAIN, epoch + 1),
        );
        if cfg.keep_epoch_checkpoints {
            let name = format!("{}-pretrain-epoch-{:04}.ckpt", cfg.run_id, epoch + 1);
            save_checkpoint(&ck, &cfg.out_dir.join("checkpoints").join(name))?;
        }
        if let Some(out) = &cfg.checkpoint_out {
            save_checkpoint(&ck, out)?;
        }
        checkpoint = Some(ck);
    }
    let checkpoint = match checkpoint {
        Some(ck) => ck,
        None => build_checkpoint(&model, &cfg.schedule, "pretrain", start, Some(&adam), run_meta(cfg, STREAM_PRETRAIN, start)),
    };
    write_loss_curve(&loss_log_path(cfg, "pretrain"), "pretraining loss")?;
    Ok(PretrainOutcome { model, checkpoint, epoch_losses })
}

/// The model fine-tuning starts from: the pretrained backbone (or a fresh
/// one with `random_init`) with a newly initialised segmentation head.
pub fn initial_finetune_model(cfg: &RunConfig) -> Result<UNetModel> {
    let mut model = if cfg.random_init {
        UNetModel::new(cfg.model_config()?, &mut item_rng(cfg.seed, STREAM_INIT))?
    } else {
        let path = cfg.checkpoint_in.as_deref().ok_or_else(|| Error::ConfigKey {
            key: "checkpoint_in".into(),
            detail: "fine-tuning needs a pretraining checkpoint (or random_init = true)".into(),
        })?;
        let ck = CheckpointFile::load(path)?;
        if stage_of(&ck)? != "pretrain" {
            return Err(Error::Usage(format!("{} is not a pretraining checkpoint", path.display())));
        }
        let mut mc = unet_config_from(&ck)?;
        mc.head_scope = cfg.head_scope;
        mc.num_classes = cfg.num_classes;
        let model = UNetModel::with_mode(mc, HeadMode::Pretrain, &mut item_rng(cfg.seed, STREAM_INIT))?;
        model.load_records(&ck.tensors)?;
        model
    };
    if model.config().in_channels != cfg.in_channels {
        return Err(Error::Config(format!(
            "checkpoint expects {} input channels, config has {}",
            model.config().in_channels,
            cfg.in_channels
        )));
    }
    model.swap_to_segmentation_head(cfg.num_classes, &mut item_rng(cfg.seed, STREAM_HEAD))?;
    Ok(model)
}

/// Supervised fine-tuning at `t = 0`; keeps the epoch with the best
/// macro-F1 on the selection split.
pub fn run_finetune(cfg: &RunConfig) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(cfg.require_manifest()?)?;
    if manifest.num_classes != cfg.num_classes {
        return Err(Error::Config(format!(
            "config has num_classes = {} but the dataset has {}",
            cfg.num_classes, manifest.num_classes
        )));
    }
    let train = load_nonempty(&manifest, SplitTag::Train)?;
    let test = load_nonempty(&manifest, SplitTag::Test)?;
    let select_split = match cfg.selection {
        Selection::Test => None,
        Selection::Val => Some(load_nonempty(&manifest, SplitTag::Val)?),
    };
    check_channels(&train, cfg.in_channels, SplitTag::Train)?;
    let select = select_split.as_deref().unwrap_or(&test);

    let model = initial_finetune_model(cfg)?;
    let params = model.parameters();
    let mut adam = AdamState::new(&params);
    let epochs = cfg.epochs_for(Stage::Finetune);
    let classes = cfg.num_classes;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let f1_col = format!("{}_f1", cfg.selection);
    let mut log = LossLog::open(&loss_log_path(cfg, "finetune"), &["epoch", "train_loss", &f1_col], true)?;

    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Vec<Vec<f64>>)> = None;
    for epoch in 0..epochs {
        let seed = epoch_seed(cfg.seed, STREAM_FINETUNE, epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Patch> = chunk.iter().map(|&i| patch_image(&train[i], cfg.augment, seed, i)).collect();
            let x = stack_images(&batch.iter().map(|p| &p.image).collect::<Vec<_>>())?;
            let masks: Vec<_> = batch.iter().map(|p| p.mask.as_ref().expect("labeled split")).collect();
            let y = stack_masks(&masks, classes)?;
            let probs = model.segment(&x)?;
            let loss = cfg.loss.evaluate(&y, &probs, &cfg.losses)?;
            model.zero_grad();
            loss.backward()?;
            adam_step(&params, &mut adam, cfg.lr)?;
            total += loss.item() * chunk.len() as f64;
        }
        round_to_f32(&model, Some(&mut adam));
        let train_loss = total / train.len() as f64;
        let m = evaluate_patches(&model, select, classes, cfg.batch_size)?;
        info!(
            "finetune epoch {}/{epochs}: loss {train_loss:.6}, {} macro-F1 {:.4}",
            epoch + 1,
            cfg.selection,
            m.f1
        );
        log.append(&[(epoch + 1) as f64, train_loss, m.f1])?;
        if best.as_ref().map_or(true, |(_, f1, _)| m.f1 > *f1) {
            best = Some((epoch + 1, m.f1, params.iter().map(|p| p.to_vec()).collect()));
        }
        history.push(EpochRecord { epoch: epoch + 1, train_loss, selection_metrics: m });
    }
    let (best_epoch, best_f1, snapshot) = best.expect("at least one epoch");
    for (p, v) in params.iter().zip(snapshot) {
        p.set_data(v)?;
    }
    let test_metrics = evaluate_patches(&model, &test, classes, cfg.batch_size)?;
    info!("selected epoch {best_epoch}: test macro-F1 {:.4}", test_metrics.f1);

    let mut extra = run_meta(cfg, STREAM_FINETUNE, best_epoch);
    extra.extend([
        ("selection".to_string(), cfg.selection.to_string()),
        ("averaging".to_string(), "macro".to_string()),
        ("selection_f1".to_string(), best_f1.to_string()),
        ("test_f1".to_string(), test_metrics.f1.to_string()),
        ("loss".to_string(), cfg.loss.to_string()),
        ("lambda_fl".to_string(), cfg.losses.lambda_fl.to_string()),
        ("pretrained".to_string(), (!cfg.random_init).to_string()),
    ]);
    let checkpoint = build_checkpoint(&model, &cfg.schedule, "finetune", best_epoch, None, extra);
    if let Some(out) = &cfg.checkpoint_out {
        save_checkpoint(&checkpoint, out)?;
    }
    if let Some(csv) = &cfg.metrics_csv {
        write_metrics_csv(csv, &cfg.run_id, "test", &test_metrics)?;
    }
    write_loss_curve(&loss_log_path(cfg, "finetune"), "fine-tuning loss")?;
    Ok(FinetuneOutcome { model, checkpoint, best_epoch, history, test_metrics })
}

/// Fine-tunes once per value of `param`, appending one metrics row each.
pub fn run_sweep(cfg: &RunConfig, param: &str, values: &[String]) -> Result<Vec<(String, SegmentationMetrics)>> {
    if values.is_empty() {
        return Err(Error::Usage("sweep needs at least one value".into()));
    }
    let mut out = Vec::with_capacity(values.len());
    for v in values {
        let mut c = cfg.clone();
        c.set(param, v)?;
        c.run_id = format!("{}_{param}={v}", cfg.run_id);
        c.checkpoint_out = cfg.checkpoint_out.as_ref().map(|p| {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            p.with_file_name(format!("{stem}_{param}={v}.ckpt"))
        });
        info!("sweep: {param} = {v}");
        let outcome = run_finetune(&c)?;
        out.push((v.clone(), outcome.test_metrics));
    }
    Ok(out)
}
