//! Attention UNet with a sinusoidal time embedding.
//!
//! The same network serves as the noise predictor during pretraining and,
//! after [`UNetModel::swap_to_segmentation_head`], as the segmentation
//! network evaluated at `t = 0`.

mod layers;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::Rng;

pub use layers::{AttnBlock, Conv2d, GroupNorm, Linear, ResBlock, TimeMlp};

use crate::diffusion::{to_model_range, NoisePredictor};
use crate::error::{Error, Result};
use crate::gradcore::checkpoint::TensorRecord;
use crate::gradcore::Tensor;
use layers::Params;

/// Which output projection is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMode {
    /// Predicts noise with `in_channels` output maps.
    Pretrain,
    /// Predicts `num_classes` logits.
    Segmentation,
}

impl fmt::Display for HeadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadMode::Pretrain => "pretrain",
            HeadMode::Segmentation => "segmentation",
        })
    }
}

impl FromStr for HeadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(HeadMode::Pretrain),
            "segmentation" => Ok(HeadMode::Segmentation),
            other => Err(Error::Config(format!("unknown head mode `{other}`"))),
        }
    }
}

/// Which parameters are re-initialised by the head swap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeadScope {
    /// Only the final output projection.
    #[default]
    Projection,
    /// The final projection plus the last decoder residual block.
    LastBlock,
}

impl fmt::Display for HeadScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadScope::Projection => "projection",
            HeadScope::LastBlock => "last_block",
        })
    }
}

impl FromStr for HeadScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "projection" => Ok(HeadScope::Projection),
            "last_block" => Ok(HeadScope::LastBlock),
            other => Err(Error::Config(format!(
                "unknown head scope `{other}` (expected projection or last_block)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNetConfig {
    pub levels: usize,
    /// Output channels per level, shallowest first.
    pub channels: Vec<usize>,
    pub in_channels: usize,
    pub num_classes: usize,
    /// Level indices that get a self-attention block.
    pub attention_levels: BTreeSet<usize>,
    /// Width of the sinusoidal step embedding (even).
    pub time_emb_dim: usize,
    pub groups: usize,
    pub head_scope: HeadScope,
}

impl UNetConfig {
    /// Named presets: `paper` (64/128/256/512), `small` (16/32/64), `tiny` (4/8/12).
    pub fn preset(name: &str, in_channels: usize, num_classes: usize) -> Result<Self> {
        let (channels, time_emb_dim, groups) = match name {
            "paper" => (vec![64, 128, 256, 512], 128, 8),
            "small" => (vec![16, 32, 64], 32, 8),
            "tiny" => (vec![4, 8, 12], 8, 4),
            other => {
                return Err(Error::Config(format!(
                    "unknown model preset `{other}` (expected paper, small or tiny)"
                )))
            }
        };
        let levels = channels.len();
        let cfg = Self {
            levels,
            channels,
            in_channels,
            num_classes,
            attention_levels: BTreeSet::from([levels - 1]),
            time_emb_dim,
            groups,
            head_scope: HeadScope::Projection,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(3..=5).contains(&self.levels) {
            return bad(format!("levels must be in 3..=5, got {}", self.levels));
        }
        if self.channels.len() != self.levels {
            return bad(format!(
                "{} channel entries for {} levels",
                self.channels.len(),
                self.levels
            ));
        }
        if self.in_channels == 0 || self.channels.contains(&0) {
            return bad("all channel counts must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.time_emb_dim == 0 || self.time_emb_dim % 2 != 0 {
            return bad(format!("time_emb_dim must be even and positive, got {}", self.time_emb_dim));
        }
        if let Some(&l) = self.attention_levels.iter().find(|&&l| l >= self.levels) {
            return bad(format!("attention level {l} does not exist"));
        }
        // every normalised width: level outputs and decoder concatenations
        let mut widths = self.channels.clone();
        widths.extend((0..self.levels - 1).map(|l| self.channels[l] + self.channels[l + 1]));
        if self.groups == 0 {
            return bad("groups must be positive".into());
        }
        if let Some(w) = widths.iter().find(|&&w| w % self.groups != 0) {
            return bad(format!("{w} channels not divisible into {} groups", self.groups));
        }
        Ok(())
    }

    /// Spatial extents must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }

    fn temb_hidden(&self) -> usize {
        4 * self.time_emb_dim
    }
}

/// Sinusoidal step embedding: `sin(t/10000^(2i/dim))` for `i < dim/2`
/// followed by the matching cosines.
pub fn time_embedding(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Config(format!("time embedding dim must be even, got {dim}")));
    }
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|i| (t as f64) / 10000f64.powf(2.0 * i as f64 / dim as f64))
        .collect();
    Ok(freqs.iter().map(|a| a.sin()).chain(freqs.iter().map(|a| a.cos())).collect())
}

#[derive(Debug, Clone)]
pub struct UNetModel {
    config: UNetConfig,
    mode: HeadMode,
    time_mlp: TimeMlp,
    conv_in: Conv2d,
    enc: Vec<ResBlock>,
    enc_attn: Vec<Option<AttnBlock>>,
    up: Vec<Conv2d>,
    dec: Vec<ResBlock>,
    dec_attn: Vec<Option<AttnBlock>>,
    out_norm: GroupNorm,
    head: Conv2d,
}

impl UNetModel {
    /// Randomly initialised model with the noise-prediction head.
    pub fn new(config: UNetConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = &config.channels;
        let (levels, groups) = (config.levels, config.groups);
        let emb = config.temb_hidden();
        let attn = |l: usize, rng: &mut _| {
            config.attention_levels.contains(&l).then(|| AttnBlock::new(c[l], groups, rng))
        };

        let time_mlp = TimeMlp::new(config.time_emb_dim, emb, rng);
        let conv_in = Conv2d::new(config.in_channels, c[0], 3, rng);
        let mut enc = Vec::new();
        let mut enc_attn = Vec::new();
        for l in 0..levels {
            let c_prev = if l == 0 { c[0] } else { c[l - 1] };
            enc.push(ResBlock::new(c_prev, c[l], emb, groups, rng));
            enc_attn.push(attn(l, rng));
        }
        let mut up = Vec::new();
        let mut dec = Vec::new();
        let mut dec_attn = Vec::new();
        for l in 0..levels - 1 {
            up.push(Conv2d::new(c[l + 1], c[l + 1], 3, rng));
            dec.push(ResBlock::new(c[l + 1] + c[l], c[l], emb, groups, rng));
            dec_attn.push(attn(l, rng));
        }
        let out_norm = GroupNorm::new(c[0], groups);
        let head = Conv2d::new(c[0], config.in_channels, 3, rng);
        Ok(Self {
            config,
            mode: HeadMode::Pretrain,
            time_mlp,
            conv_in,
            enc,
            enc_attn,
            up,
            dec,
            dec_attn,
            out_norm,
            head,
        })
    }

    /// Model whose head matches `mode` (segmentation heads are sized by
    /// `config.num_classes`). Used before loading a checkpoint.
    pub fn with_mode(config: UNetConfig, mode: HeadMode, rng: &mut impl Rng) -> Result<Self> {
        let classes = config.num_classes;
        let mut m = Self::new(config, rng)?;
        if mode == HeadMode::Segmentation {
            m.swap_to_segmentation_head(classes, rng)?;
        }
        Ok(m)
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn mode(&self) -> HeadMode {
        self.mode
    }

    pub fn output_channels(&self) -> usize {
        self.head.out_channels()
    }

    fn collect(&self) -> Params<'_> {
        let mut out = Vec::new();
        self.time_mlp.params("time", &mut out);
        self.conv_in.params("conv_in", &mut out);
        for (l, (block, attn)) in self.enc.iter().zip(&self.enc_attn).enumerate() {
            block.params(&format!("enc.{l}.res"), &mut out);
            if let Some(a) = attn {
                a.params(&format!("enc.{l}.attn"), &mut out);
            }
        }
        for l in 0..self.dec.len() {
            self.up[l].params(&format!("up.{l}"), &mut out);
            self.dec[l].params(&format!("dec.{l}.res"), &mut out);
            if let Some(a) = &self.dec_attn[l] {
                a.params(&format!("dec.{l}.attn"), &mut out);
            }
        }
        self.out_norm.params("out_norm", &mut out);
        self.head.params("head", &mut out);
        out
    }

    /// All parameters with stable hierarchical names, in a fixed order.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        self.collect().into_iter().map(|(n, t)| (n, t.clone())).collect()
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        self.collect().into_iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.collect().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&self) {
        self.collect().iter().for_each(|(_, t)| t.zero_grad());
    }

    /// Whether `name` belongs to the part replaced by the head swap.
    pub fn is_head_parameter(&self, name: &str) -> bool {
        name.starts_with("head.")
            || (self.config.head_scope == HeadScope::LastBlock
                && (name.starts_with("dec.0.res.") || name.starts_with("dec.0.attn.")))
    }

    pub fn to_records(&self) -> Vec<TensorRecord> {
        self.collect()
            .into_iter()
            .map(|(n, t)| TensorRecord::from_tensor(n, t))
            .collect()
    }

    /// Copies values from `records` into the parameters with matching names.
    /// Every parameter must be present with the right shape; extra records
    /// are ignored.
    pub fn load_records(&self, records: &[TensorRecord]) -> Result<()> {
        for (name, t) in self.collect() {
            let rec = records
                .iter()
                .find(|r| r.name == name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks parameter `{name}`")))?;
            if rec.shape != t.shape() {
                return Err(Error::Data(format!(
                    "parameter `{name}` has shape {:?} in checkpoint but {:?} in model",
                    rec.shape,
                    t.shape()
                )));
            }
            t.set_data(rec.to_f64())?;
        }
        Ok(())
    }

    /// Replaces the output projection (and, for [`HeadScope::LastBlock`],
    /// the last decoder block) with fresh weights producing `num_classes`
    /// maps. Everything else is left untouched.
    pub fn swap_to_segmentation_head(&mut self, num_classes: usize, rng: &mut impl Rng) -> Result<()> {
        if self.mode == HeadMode::Segmentation {
            return Err(Error::Usage("model already has a segmentation head".into()));
        }
        if num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be at least 2, got {num_classes}")));
        }
        let c = self.config.channels.clone();
        let (groups, emb) = (self.config.groups, self.config.temb_hidden());
        if self.config.head_scope == HeadScope::LastBlock {
            self.dec[0] = ResBlock::new(c[1] + c[0], c[0], emb, groups, rng);
            if self.dec_attn[0].is_some() {
                self.dec_attn[0] = Some(AttnBlock::new(c[0], groups, rng));
            }
        }
        self.head = Conv2d::new(c[0], num_classes, 3, rng);
        self.config.num_classes = num_classes;
        self.mode = HeadMode::Segmentation;
        Ok(())
    }

    fn check_input(&self, x: &Tensor, t: &[usize]) -> Result<()> {
        let &[n, c, h, w] = x.shape() else {
            return Err(Error::invalid_shape(
                "unet",
                format!("expected NCHW input, got {:?}", x.shape()),
            ));
        };
        if c != self.config.in_channels {
            return Err(Error::shape("unet input channels", &[c], &[self.config.in_channels]));
        }
        let m = self.config.spatial_multiple();
        if h % m != 0 || w % m != 0 {
            let pad_h = h.div_ceil(m) * m;
            let pad_w = w.div_ceil(m) * m;
            return Err(Error::invalid_shape(
                "unet",
                format!(
                    "spatial extents {h}x{w} must be multiples of {m}; pad the input to {pad_h}x{pad_w}"
                ),
            ));
        }
        if t.len() != n {
            return Err(Error::shape("unet time steps", &[n], &[t.len()]));
        }
        Ok(())
    }

    /// Full encoder–decoder pass. In segmentation mode the step is always 0.
    pub fn forward(&self, x: &Tensor, t: &[usize]) -> Result<Tensor> {
        self.check_input(x, t)?;
        let n = t.len();
        let zeros;
        let t = if self.mode == HeadMode::Segmentation {
            if t.iter().any(|&ti| ti != 0) {
                warn!("segmentation forward ignores non-zero time steps; using t = 0");
            }
            zeros = vec![0; n];
            &zeros
        } else {
            t
        };

        let d = self.config.time_emb_dim;
        let mut emb = Vec::with_capacity(n * d);
        for &ti in t {
            emb.extend(time_embedding(ti, d)?);
        }
        let temb = self.time_mlp.forward(&Tensor::from_vec(&[n, d], emb)?)?;

        let levels = self.config.levels;
        let mut h = self.conv_in.forward(x)?;
        let mut skips = Vec::with_capacity(levels - 1);
        for l in 0..levels {
            h = self.enc[l].forward(&h, &temb)?;
            if let Some(a) = &self.enc_attn[l] {
                h = a.forward(&h)?;
            }
            if l + 1 < levels {
                skips.push(h.clone());
                h = h.avg_pool2d(2)?;
            }
        }
        for l in (0..levels - 1).rev() {
            h = self.up[l].forward(&h.upsample_nearest2d(2)?)?;
            h = Tensor::concat(&[&h, &skips[l]], 1)?;
            h = self.dec[l].forward(&h, &temb)?;
            if let Some(a) = &self.dec_attn[l] {
                h = a.forward(&h)?;
            }
        }
        self.head.forward(&self.out_norm.forward(&h)?.silu())
    }

    /// Segmentation logits at `t = 0` for images in `[0, 1]`. The input is
    /// mapped to `[-1, 1]`, the range clean images had during pretraining.
    pub fn segment_logits(&self, x: &Tensor) -> Result<Tensor> {
        if self.mode != HeadMode::Segmentation {
            return Err(Error::Usage("model has no segmentation head".into()));
        }
        self.forward(&to_model_range(x), &vec![0; x.shape().first().copied().unwrap_or(0)])
    }

    /// Per-pixel class probabilities at `t = 0`.
    pub fn segment(&self, x: &Tensor) -> Result<Tensor> {
        self.segment_logits(x)?.softmax_channel()
    }
}

impl NoisePredictor for UNetModel {
    fn predict_noise(&self, x_t: &Tensor, t: &[usize]) -> Result<Tensor> {
        if self.mode != HeadMode::Pretrain {
            return Err(Error::Usage(
                "noise prediction needs the pretrain head; this model has a segmentation head".into(),
            ));
        }
        self.forward(x_t, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_step_embedding() {
        let e = time_embedding(0, 8).unwrap();
        assert_eq!(&e[..4], &[0.0; 4]);
        assert_eq!(&e[4..], &[1.0; 4]);
        assert!(time_embedding(3, 7).is_err());
    }

    #[test]
    fn neighbouring_steps_differ() {
        let a = time_embedding(1, 16).unwrap();
        let b = time_embedding(2, 16).unwrap();
        assert_eq!(a, time_embedding(1, 16).unwrap());
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn presets_validate() {
        for p in ["paper", "small", "tiny"] {
            UNetConfig::preset(p, 3, 3).unwrap();
        }
        assert!(UNetConfig::preset("huge", 3, 3).is_err());
        let mut c = UNetConfig::preset("tiny", 1, 2).unwrap();
        c.groups = 3;
        assert!(c.validate().is_err());
        let mut c = UNetConfig::preset("tiny", 1, 2).unwrap();
        c.num_classes = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn pretrain_output_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = UNetModel::new(UNetConfig::preset("tiny", 1, 3).unwrap(), &mut rng).unwrap();
        let x = Tensor::zeros(&[8, 1, 32, 32]);
        let y = m.forward(&x, &[5; 8]).unwrap();
        assert_eq!(y.shape(), &[8, 1, 32, 32]);
    }

    #[test]
    fn indivisible_input_names_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = UNetModel::new(UNetConfig::preset("tiny", 1, 3).unwrap(), &mut rng).unwrap();
        let err = m.forward(&Tensor::zeros(&[1, 1, 10, 12]), &[1]).unwrap_err();
        assert!(err.to_string().contains("12x12"), "{err}");
    }

    #[test]
    fn swap_keeps_backbone() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = UNetModel::new(UNetConfig::preset("tiny", 3, 3).unwrap(), &mut rng).unwrap();
        let before = m.named_parameters();
        m.swap_to_segmentation_head(4, &mut rng).unwrap();
        assert_eq!(m.output_channels(), 4);
        for ((n1, t1), (n2, t2)) in before.iter().zip(m.named_parameters()) {
            assert_eq!(n1, &n2);
            if !m.is_head_parameter(n1) {
                assert_eq!(t1.to_vec(), t2.to_vec(), "{n1}");
            }
        }
        assert!(m.swap_to_segmentation_head(4, &mut rng).is_err());
        assert!(matches!(
            m.predict_noise(&Tensor::zeros(&[1, 3, 8, 8]), &[1]),
            Err(Error::Usage(_))
        ));
        let p = m.segment(&Tensor::zeros(&[2, 3, 8, 8])).unwrap().to_vec();
        for px in 0..64 {
            let s: f64 = (0..4).map(|c| p[c * 64 + px]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
