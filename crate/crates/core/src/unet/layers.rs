//! Parameterised building blocks of the UNet.

use rand::Rng;

use crate::error::Result;
use crate::gradcore::{group_norm, matmul_attention, Tensor};

pub(crate) type Params<'a> = Vec<(String, &'a Tensor)>;

/// Uniform in `±1/√fan_in`.
fn uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::parameter(shape, data).expect("positive extents")
}

fn zeros_param(shape: &[usize]) -> Tensor {
    Tensor::parameter(shape, vec![0.0; shape.iter().product()]).expect("positive extents")
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(c_in: usize, c_out: usize, k: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: uniform(&[c_out, c_in, k, k], c_in * k * k, rng),
            bias: zeros_param(&[c_out]),
            padding: k / 2,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.weight, Some(&self.bias), 1, self.padding)
    }

    pub(crate) fn params<'a>(&'a self, prefix: &str, out: &mut Params<'a>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub scale: Tensor,
    pub shift: Tensor,
    pub groups: usize,
}

impl GroupNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(channels: usize, groups: usize) -> Self {
        Self {
            scale: Tensor::parameter(&[channels], vec![1.0; channels]).expect("positive"),
            shift: zeros_param(&[channels]),
            groups,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        group_norm(x, self.groups, &self.scale, &self.shift, Self::EPS)
    }

    pub(crate) fn params<'a>(&'a self, prefix: &str, out: &mut Params<'a>) {
        out.push((format!("{prefix}.scale"), &self.scale));
        out.push((format!("{prefix}.shift"), &self.shift));
    }
}

/// `y = x·W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: uniform(&[d_in, d_out], d_in, rng),
            bias: zeros_param(&[d_out]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add(&self.bias)
    }

    pub(crate) fn params<'a>(&'a self, prefix: &str, out: &mut Params<'a>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }
}

/// GroupNorm → SiLU → conv3×3 (+ time embedding) → GroupNorm → SiLU → conv3×3,
/// with a residual connection (1×1 projection when channel counts differ).
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub norm1: GroupNorm,
    pub conv1: Conv2d,
    pub time_proj: Linear,
    pub norm2: GroupNorm,
    pub conv2: Conv2d,
    pub skip: Option<Conv2d>,
}

impl ResBlock {
    pub fn new(c_in: usize, c_out: usize, temb_dim: usize, groups: usize, rng: &mut impl Rng) -> Self {
        Self {
            norm1: GroupNorm::new(c_in, groups),
            conv1: Conv2d::new(c_in, c_out, 3, rng),
            time_proj: Linear::new(temb_dim, c_out, rng),
            norm2: GroupNorm::new(c_out, groups),
            conv2: Conv2d::new(c_out, c_out, 3, rng),
            skip: (c_in != c_out).then(|| Conv2d::new(c_in, c_out, 1, rng)),
        }
    }

    /// `temb: [N, E]`.
    pub fn forward(&self, x: &Tensor, temb: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&self.norm1.forward(x)?.silu())?;
        let c = self.conv1.out_channels();
        let n = temb.shape()[0];
        let t = self.time_proj.forward(&temb.silu())?.reshape(&[n, c, 1, 1])?;
        let h = h.add(&t)?;
        let h = self.conv2.forward(&self.norm2.forward(&h)?.silu())?;
        match &self.skip {
            Some(proj) => h.add(&proj.forward(x)?),
            None => h.add(x),
        }
    }

    pub(crate) fn params<'a>(&'a self, prefix: &str, out: &mut Params<'a>) {
        self.norm1.params(&format!("{prefix}.norm1"), out);
        self.conv1.params(&format!("{prefix}.conv1"), out);
        self.time_proj.params(&format!("{prefix}.time_proj"), out);
        self.norm2.params(&format!("{prefix}.norm2"), out);
        self.conv2.params(&format!("{prefix}.conv2"), out);
        if let Some(s) = &self.skip {
            s.params(&format!("{prefix}.skip"), out);
        }
    }
}

/// Single-head self-attention over spatial positions, with residual.
#[derive(Debug, Clone)]
pub struct AttnBlock {
    pub norm: GroupNorm,
    pub qkv: Conv2d,
    pub proj: Conv2d,
}

impl AttnBlock {
    pub fn new(channels: usize, groups: usize, rng: &mut impl Rng) -> Self {
        Self {
            norm: GroupNorm::new(channels, groups),
            qkv: Conv2d::new(channels, 3 * channels, 1, rng),
            proj: Conv2d::new(channels, channels, 1, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let &[n, c, h, w] = x.shape() else {
            unreachable!("UNet activations are NCHW")
        };
        let qkv = self.qkv.forward(&self.norm.forward(x)?)?;
        // [N, C, H, W] → [N, HW, C]
        let seq = |i: usize| -> Result<Tensor> {
            qkv.narrow(1, i * c, c)?.reshape(&[n, c, h * w])?.permute(&[0, 2, 1])
        };
        let (q, k, v) = (seq(0)?, seq(1)?, seq(2)?);
        let out = matmul_attention(&q, &k, &v)?;
        let out = out.permute(&[0, 2, 1])?.reshape(&[n, c, h, w])?;
        x.add(&self.proj.forward(&out)?)
    }

    pub(crate) fn params<'a>(&'a self, prefix: &str, out: &mut Params<'a>) {
        self.norm.params(&format!("{prefix}.norm"), out);
        self.qkv.params(&format!("{prefix}.qkv"), out);
        self.proj.params(&format!("{prefix}.proj"), out);
    }
}

/// Two-layer MLP applied to the sinusoidal step embedding.
#[derive(Debug, Clone)]
pub struct TimeMlp {
    pub lin1: Linear,
    pub lin2: Linear,
}

impl TimeMlp {
    pub fn new(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            lin1: Linear::new(d_in, d_out, rng),
            lin2: Linear::new(d_out, d_out, rng),
        }
    }

    pub fn forward(&self, emb: &Tensor) -> Result<Tensor> {
        self.lin2.forward(&self.lin1.forward(emb)?.silu())
    }

    pub(crate) fn params<'a>(&'a self, prefix: &str, out: &mut Params<'a>) {
        self.lin1.params(&format!("{prefix}.lin1"), out);
        self.lin2.params(&format!("{prefix}.lin2"), out);
    }
}
