//! Model checkpoints: parameters, Adam moments and run metadata.

use std::collections::BTreeSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gradcore::checkpoint::{CheckpointFile, TensorRecord};
use crate::gradcore::AdamState;
use crate::schedule::ScheduleParams;
use crate::unet::{HeadMode, UNetConfig, UNetModel};

/// Stream offsets for [`crate::data::item_rng`] under the run seed.
pub(crate) const STREAM_INIT: u64 = 0;
pub(crate) const STREAM_HEAD: u64 = 1;
pub(crate) const STREAM_SAMPLE: u64 = 2;
pub(crate) const STREAM_PRETRAIN: u64 = 1 << 32;
pub(crate) const STREAM_FINETUNE: u64 = 2 << 32;

/// Seed of one training epoch, derived from the run seed only.
pub(crate) fn epoch_seed(seed: u64, stream: u64, epoch: usize) -> u64 {
    crate::data::item_rng(seed, stream + epoch as u64).gen()
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn meta_value<'a>(ck: &'a CheckpointFile, key: &str) -> Result<&'a str> {
    ck.meta(key).ok_or_else(|| Error::Data(format!("checkpoint metadata lacks `{key}`")))
}

fn meta_parse<T: std::str::FromStr>(ck: &CheckpointFile, key: &str) -> Result<T> {
    let v = meta_value(ck, key)?;
    v.parse().map_err(|_| Error::Data(format!("checkpoint metadata `{key}` has bad value `{v}`")))
}

fn meta_list(ck: &CheckpointFile, key: &str) -> Result<Vec<usize>> {
    let v = meta_value(ck, key)?;
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| s.parse().map_err(|_| Error::Data(format!("checkpoint metadata `{key}` has bad value `{v}`"))))
        .collect()
}

pub fn model_metadata(model: &UNetModel) -> Vec<(String, String)> {
    let c = model.config();
    vec![
        ("model.levels".into(), c.levels.to_string()),
        ("model.channels".into(), join(&c.channels)),
        ("model.in_channels".into(), c.in_channels.to_string()),
        ("model.num_classes".into(), c.num_classes.to_string()),
        ("model.attention_levels".into(), join(&c.attention_levels)),
        ("model.time_emb_dim".into(), c.time_emb_dim.to_string()),
        ("model.groups".into(), c.groups.to_string()),
        ("model.head_scope".into(), c.head_scope.to_string()),
        ("model.head".into(), model.mode().to_string()),
    ]
}

pub fn schedule_metadata(s: &ScheduleParams) -> Vec<(String, String)> {
    vec![
        ("schedule.timesteps".into(), s.timesteps.to_string()),
        ("schedule.beta_start".into(), s.beta_start.to_string()),
        ("schedule.beta_end".into(), s.beta_end.to_string()),
        ("schedule.p2_k".into(), s.p2_k.to_string()),
        ("schedule.p2_gamma".into(), s.p2_gamma.to_string()),
    ]
}

pub fn unet_config_from(ck: &CheckpointFile) -> Result<UNetConfig> {
    let cfg = UNetConfig {
        levels: meta_parse(ck, "model.levels")?,
        channels: meta_list(ck, "model.channels")?,
        in_channels: meta_parse(ck, "model.in_channels")?,
        num_classes: meta_parse(ck, "model.num_classes")?,
        attention_levels: meta_list(ck, "model.attention_levels")?.into_iter().collect::<BTreeSet<_>>(),
        time_emb_dim: meta_parse(ck, "model.time_emb_dim")?,
        groups: meta_parse(ck, "model.groups")?,
        head_scope: meta_value(ck, "model.head_scope")?.parse()?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn schedule_from(ck: &CheckpointFile) -> Result<ScheduleParams> {
    Ok(ScheduleParams {
        timesteps: meta_parse(ck, "schedule.timesteps")?,
        beta_start: meta_parse(ck, "schedule.beta_start")?,
        beta_end: meta_parse(ck, "schedule.beta_end")?,
        p2_k: meta_parse(ck, "schedule.p2_k")?,
        p2_gamma: meta_parse(ck, "schedule.p2_gamma")?,
    })
}

pub fn head_mode_of(ck: &CheckpointFile) -> Result<HeadMode> {
    meta_value(ck, "model.head")?.parse()
}

pub fn stage_of(ck: &CheckpointFile) -> Result<&str> {
    meta_value(ck, "stage")
}

pub fn epoch_of(ck: &CheckpointFile) -> Result<usize> {
    meta_parse(ck, "epoch")
}

/// Rebuilds the model described by the checkpoint and loads its weights.
pub fn load_model(ck: &CheckpointFile) -> Result<UNetModel> {
    let cfg = unet_config_from(ck)?;
    // weights are overwritten; the init stream is irrelevant
    let mut rng = crate::data::item_rng(0, STREAM_INIT);
    let model = UNetModel::with_mode(cfg, head_mode_of(ck)?, &mut rng)?;
    model.load_records(&ck.tensors)?;
    Ok(model)
}

/// Adam state stored alongside the model, if any.
pub fn load_adam(ck: &CheckpointFile, model: &UNetModel) -> Result<Option<AdamState>> {
    let Some(step) = ck.meta("adam.step") else {
        return Ok(None);
    };
    let step: u64 = step.parse().map_err(|_| Error::Data("bad adam.step".into()))?;
    let names: Vec<String> = model.named_parameters().into_iter().map(|(n, _)| n).collect();
    let moments = |kind: &str| -> Result<Vec<Vec<f64>>> {
        names
            .iter()
            .map(|n| {
                ck.tensor(&format!("adam.{kind}.{n}"))
                    .map(TensorRecord::to_f64)
                    .ok_or_else(|| Error::Data(format!("checkpoint lacks Adam moment for `{n}`")))
            })
            .collect()
    };
    Ok(Some(AdamState {
        step,
        beta1: meta_parse(ck, "adam.beta1")?,
        beta2: meta_parse(ck, "adam.beta2")?,
        eps: meta_parse(ck, "adam.eps")?,
        first_moment: moments("m")?,
        second_moment: moments("v")?,
    }))
}

/// Assembles a checkpoint. Metadata order is fixed so equal states give
/// identical bytes.
pub fn build_checkpoint(
    model: &UNetModel,
    schedule: &ScheduleParams,
    stage: &str,
    epoch: usize,
    adam: Option<&AdamState>,
    extra: Vec<(String, String)>,
) -> CheckpointFile {
    let mut metadata = vec![("stage".to_string(), stage.to_string()), ("epoch".to_string(), epoch.to_string())];
    metadata.extend(model_metadata(model));
    metadata.extend(schedule_metadata(schedule));
    let mut tensors = model.to_records();
    if let Some(a) = adam {
        metadata.extend([
            ("adam.step".to_string(), a.step.to_string()),
            ("adam.beta1".to_string(), a.beta1.to_string()),
            ("adam.beta2".to_string(), a.beta2.to_string()),
            ("adam.eps".to_string(), a.eps.to_string()),
        ]);
        let named = model.named_parameters();
        for (kind, moments) in [("m", &a.first_moment), ("v", &a.second_moment)] {
            for ((name, t), data) in named.iter().zip(moments.iter()) {
                tensors.push(TensorRecord::from_f64(format!("adam.{kind}.{name}"), t.shape(), data));
            }
        }
    }
    metadata.extend(extra);
    CheckpointFile { metadata, tensors }
}

/// Rounds parameters and Adam moments to the 32-bit values a checkpoint
/// stores, so continuing in memory and resuming from disk agree exactly.
pub fn round_to_f32(model: &UNetModel, adam: Option<&mut AdamState>) {
    let round = |v: &mut f64| *v = *v as f32 as f64;
    for p in model.parameters() {
        p.update_data(|d| d.iter_mut().for_each(round));
    }
    if let Some(a) = adam {
        a.first_moment.iter_mut().chain(a.second_moment.iter_mut()).flatten().for_each(round);
    }
}
