//! Forward noising, noise-prediction objectives and ancestral sampling.
//!
//! Images enter in `[0, 1]` and are mapped to `[-1, 1]` before noising;
//! [`sample`] maps its output back to `[0, 1]`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gradcore::{no_grad, Tensor};
use crate::schedule::NoiseSchedule;

/// Something that predicts the noise in `x_t` given per-sample steps `t`.
pub trait NoisePredictor {
    fn predict_noise(&self, x_t: &Tensor, t: &[usize]) -> Result<Tensor>;
}

/// `[0, 1] → [-1, 1]`.
pub fn to_model_range(x: &Tensor) -> Tensor {
    x.scale(2.0).add_scalar(-1.0)
}

/// `[-1, 1] → [0, 1]` after clamping.
pub fn from_model_range(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|v| (v.clamp(-1.0, 1.0) + 1.0) * 0.5).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub fn standard_normal(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::from_vec(shape, data).expect("positive extents")
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn affine(op: &'static str, a: &Tensor, ca: f64, b: &Tensor, cb: f64) -> Result<Tensor> {
    same_shape(op, a, b)?;
    let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| ca * x + cb * y).collect();
    Tensor::from_vec(a.shape(), data)
}

/// One Markov noising step with an explicit rate:
/// `√(1 − β)·x_prev + √β·ε`. `β` may be anywhere in `[0, 1]`.
pub fn noising_step(x_prev: &Tensor, beta: f64, eps: &Tensor) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Domain {
            op: "noising_step",
            detail: format!("beta {beta} outside [0, 1]"),
        });
    }
    affine("noising_step", x_prev, (1.0 - beta).sqrt(), eps, beta.sqrt())
}

/// `x_t = √(1 − β_t)·x_{t−1} + √β_t·ε_t`.
pub fn step_forward(x_prev: &Tensor, t: usize, eps_t: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    s.check_step(t, 1)?;
    noising_step(x_prev, s.beta(t), eps_t)
}

/// Closed form `x_t = √ᾱ_t·x_0 + √(1 − ᾱ_t)·ε`.
pub fn forward_sample(x0: &Tensor, t: usize, eps: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    s.check_step(t, 1)?;
    let bar = s.alpha_bar(t);
    affine("forward_sample", x0, bar.sqrt(), eps, (1.0 - bar).sqrt())
}

/// [`forward_sample`] with a separate step per leading-axis sample.
pub fn forward_sample_batch(x0: &Tensor, t: &[usize], eps: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    same_shape("forward_sample_batch", x0, eps)?;
    let n = x0.shape().first().copied().unwrap_or(1);
    if t.len() != n {
        return Err(Error::shape("forward_sample_batch", &[n], &[t.len()]));
    }
    let per = x0.numel() / n;
    let (xd, ed) = (x0.data(), eps.data());
    let mut out = Vec::with_capacity(x0.numel());
    for (i, &ti) in t.iter().enumerate() {
        s.check_step(ti, 1)?;
        let (a, b) = (s.alpha_bar(ti).sqrt(), (1.0 - s.alpha_bar(ti)).sqrt());
        out.extend((i * per..(i + 1) * per).map(|j| a * xd[j] + b * ed[j]));
    }
    Tensor::from_vec(x0.shape(), out)
}

/// Per-sample mean squared error `[N]` → shape `[N, 1, ..]`.
fn per_sample_mse(op: &'static str, eps: &Tensor, eps_pred: &Tensor) -> Result<Tensor> {
    same_shape(op, eps, eps_pred)?;
    let diff = eps.sub(eps_pred)?;
    let sq = diff.mul(&diff)?;
    if sq.ndim() <= 1 {
        return Ok(sq);
    }
    let axes: Vec<usize> = (1..sq.ndim()).collect();
    sq.mean_axes(&axes)
}

/// Batch mean of the per-sample mean squared error.
pub fn simple_loss(eps: &Tensor, eps_pred: &Tensor) -> Result<Tensor> {
    Ok(per_sample_mse("simple_loss", eps, eps_pred)?.mean())
}

/// Batch mean of `p2_weight(t_n) · mse_n`.
pub fn p2_loss(eps: &Tensor, eps_pred: &Tensor, t: &[usize], s: &NoiseSchedule) -> Result<Tensor> {
    let mse = per_sample_mse("p2_loss", eps, eps_pred)?;
    if mse.shape()[0] != t.len() {
        return Err(Error::shape("p2_loss", &[mse.shape()[0]], &[t.len()]));
    }
    let weights = t.iter().map(|&ti| s.p2_weight(ti)).collect::<Result<Vec<_>>>()?;
    let w = Tensor::from_vec(mse.shape(), weights)?;
    Ok(mse.mul(&w)?.mean())
}

/// `(1 − α_t) / (2·α_t·(1 − ᾱ_{t−1}))`, the factor turning noise MSE into
/// the denoising-matching KL term, for `t ≥ 2`.
pub fn vlb_term_weight(s: &NoiseSchedule, t: usize) -> Result<f64> {
    s.check_step(t, 2)?;
    let alpha = s.alpha(t);
    Ok((1.0 - alpha) / (2.0 * alpha * (1.0 - s.alpha_bar(t - 1))))
}

/// Posterior mean `μ_q(x_t, x_0)` for `t ≥ 2`.
pub fn posterior_mean(x_t: &Tensor, x0: &Tensor, t: usize, s: &NoiseSchedule) -> Result<Tensor> {
    let (cx, c0) = s.posterior_mean_coeffs(t)?;
    affine("posterior_mean", x_t, cx, x0, c0)
}

/// Model mean `μ_θ = (x_t − (1 − α_t)/√(1 − ᾱ_t)·ε̂) / √α_t`.
pub fn model_mean(x_t: &Tensor, t: usize, eps_pred: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    s.check_step(t, 1)?;
    let alpha = s.alpha(t);
    let inv = 1.0 / alpha.sqrt();
    let coef = (1.0 - alpha) / (1.0 - s.alpha_bar(t)).sqrt();
    affine("model_mean", x_t, inv, eps_pred, -coef * inv)
}

/// One ancestral step: `μ_θ + σ_q(t)·z`, with the noise term dropped at `t = 1`.
pub fn reverse_step(x_t: &Tensor, t: usize, eps_pred: &Tensor, z: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    let mean = model_mean(x_t, t, eps_pred, s)?;
    if t == 1 {
        return Ok(mean);
    }
    affine("reverse_step", &mean, 1.0, z, s.posterior_variance(t).sqrt())
}

/// One noising draw for a batch of clean images.
#[derive(Debug, Clone)]
pub struct DiffusionBatch {
    /// Clean images in `[-1, 1]`.
    pub x0: Tensor,
    pub t: Vec<usize>,
    pub eps: Tensor,
    pub xt: Tensor,
}

impl DiffusionBatch {
    /// `images` are in `[0, 1]`; steps are uniform on `1..=T`.
    pub fn draw(images: &Tensor, s: &NoiseSchedule, rng: &mut impl Rng) -> Result<Self> {
        let x0 = to_model_range(&images.detach());
        let n = x0.shape().first().copied().unwrap_or(1);
        let t: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=s.timesteps())).collect();
        let eps = standard_normal(x0.shape(), rng);
        let xt = forward_sample_batch(&x0, &t, &eps, s)?;
        Ok(Self { x0, t, eps, xt })
    }
}

/// Draws steps and noise, predicts the noise, and backpropagates the P2 loss.
/// Gradients accumulate into the model parameters; the caller zeroes them.
pub fn pretrain_step<P: NoisePredictor + ?Sized>(
    model: &P,
    images: &Tensor,
    s: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<f64> {
    let batch = DiffusionBatch::draw(images, s, rng)?;
    let pred = model.predict_noise(&batch.xt, &batch.t)?;
    let loss = p2_loss(&batch.eps, &pred, &batch.t, s)?;
    loss.backward()?;
    Ok(loss.item())
}

/// Ancestral sampling from pure noise; returns `n` images of shape
/// `image_shape = [C, H, W]` in `[0, 1]`.
pub fn sample<P: NoisePredictor + ?Sized>(
    model: &P,
    n: usize,
    image_shape: [usize; 3],
    s: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let shape = [n, image_shape[0], image_shape[1], image_shape[2]];
    no_grad(|| {
        let mut x = standard_normal(&shape, rng);
        for t in (1..=s.timesteps()).rev() {
            let eps_pred = model.predict_noise(&x, &vec![t; n])?;
            let z = if t > 1 { standard_normal(&shape, rng) } else { Tensor::zeros(&shape) };
            x = reverse_step(&x, t, &eps_pred, &z, s)?;
        }
        Ok(from_model_range(&x))
    })
}
