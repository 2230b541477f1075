//! Property suites shared by the integration tests and the acceptance
//! harness. Each returns a list of named checks; a check holds an error
//! measure and the largest value it may take.

use diffseg::diffusion::{forward_sample, model_mean, p2_loss, posterior_mean, reverse_step, simple_loss, standard_normal};
use diffseg::gradcore::{group_norm, matmul_attention, no_grad, Tensor};
use diffseg::schedule::{build_linear_schedule, NoiseSchedule};
use diffseg::seglosses::{
    ce_loss, focal_loss, normalized_deviation, segmentation_metrics, ss_loss, ssfl_loss, ConfusionMatrix, FocalConfig,
    MaxScope, MultiLossConfig, SSLossConfig, WeightingMode,
};
use diffseg::unet::{AttnBlock, HeadMode, ResBlock, TimeMlp, UNetConfig, UNetModel};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{bayes, fd, losses, metrics, random_pair};

#[derive(Debug, Clone)]
pub struct Check {
    pub label: String,
    pub value: f64,
    pub limit: f64,
}

impl Check {
    pub fn new(label: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { label: label.into(), value, limit }
    }

    /// A yes/no property: value 0 when it holds.
    pub fn holds(label: impl Into<String>, ok: bool) -> Self {
        Self::new(label, if ok { 0.0 } else { 1.0 }, 0.0)
    }

    pub fn ok(&self) -> bool {
        self.value <= self.limit
    }
}

pub fn failures(checks: &[Check]) -> Vec<&Check> {
    checks.iter().filter(|c| !c.ok()).collect()
}

pub fn worst(checks: &[Check]) -> f64 {
    checks.iter().map(|c| c.value).fold(0.0, f64::max)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn param(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::parameter(shape, data).unwrap()
}

fn uniform_param(shape: &[usize], lo: f64, hi: f64, r: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    param(shape, (0..n).map(|_| r.gen_range(lo..hi)).collect())
}

fn signed_param(shape: &[usize], lo: f64, hi: f64, r: &mut impl Rng) -> Tensor {
    param(shape, fd::away_from_zero(shape.iter().product(), lo, hi, r))
}

/// `Σ out ⊙ W` for fixed random `W`.
fn probe(out: Tensor, w: &Tensor) -> Tensor {
    if out.numel() == 1 {
        return out.sum();
    }
    out.mul(w).unwrap().sum()
}

pub const OP_TOL: f64 = 1e-4;
pub const COMPOSED_TOL: f64 = 1e-3;
const FD_STEP: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-6;

type OpCase = (&'static str, Vec<Tensor>, Box<dyn Fn(&[Tensor]) -> Tensor>);

fn op_cases(r: &mut ChaCha8Rng) -> Vec<OpCase> {
    let mut cases: Vec<OpCase> = Vec::new();
    let mut push = |name, inputs, f: Box<dyn Fn(&[Tensor]) -> Tensor>| cases.push((name, inputs, f));

    let a = || signed_param(&[2, 3, 4], 0.1, 1.5, &mut rng(11));
    let b = || signed_param(&[3, 1], 0.5, 1.5, &mut rng(12));
    push("add (broadcast)", vec![a(), b()], Box::new(|x| x[0].add(&x[1]).unwrap()));
    push("sub (broadcast)", vec![a(), b()], Box::new(|x| x[0].sub(&x[1]).unwrap()));
    push("mul (broadcast)", vec![a(), b()], Box::new(|x| x[0].mul(&x[1]).unwrap()));
    push("div (broadcast)", vec![a(), b()], Box::new(|x| x[0].div(&x[1]).unwrap()));
    let pos = |r: &mut ChaCha8Rng| uniform_param(&[3, 4], 0.2, 2.0, r);
    push("exp", vec![signed_param(&[3, 4], 0.1, 1.5, r)], Box::new(|x| x[0].exp()));
    push("log", vec![pos(r)], Box::new(|x| x[0].log().unwrap()));
    push("log_clamped", vec![pos(r)], Box::new(|x| x[0].log_clamped(1e-3).unwrap()));
    push("sqrt", vec![pos(r)], Box::new(|x| x[0].sqrt().unwrap()));
    push("sqrt_clamped", vec![pos(r)], Box::new(|x| x[0].sqrt_clamped(1e-3)));
    push("powf (fractional)", vec![pos(r)], Box::new(|x| x[0].powf(2.5)));
    push("powf (integer)", vec![signed_param(&[3, 4], 0.1, 1.5, r)], Box::new(|x| x[0].powf(3.0)));
    push("neg", vec![signed_param(&[3, 4], 0.1, 1.5, r)], Box::new(|x| x[0].neg()));
    push("relu", vec![signed_param(&[3, 4], 0.05, 1.5, r)], Box::new(|x| x[0].relu()));
    push("silu", vec![signed_param(&[3, 4], 0.0, 3.0, r)], Box::new(|x| x[0].silu()));
    push("abs", vec![signed_param(&[3, 4], 0.05, 1.5, r)], Box::new(|x| x[0].abs()));
    push("scale", vec![signed_param(&[3, 4], 0.1, 1.5, r)], Box::new(|x| x[0].scale(-1.7)));
    push("add_scalar", vec![signed_param(&[3, 4], 0.1, 1.5, r)], Box::new(|x| x[0].add_scalar(0.3)));
    push("rsub_scalar", vec![signed_param(&[3, 4], 0.1, 1.5, r)], Box::new(|x| x[0].rsub_scalar(0.3)));
    push("sum", vec![signed_param(&[2, 3, 4], 0.1, 1.5, r)], Box::new(|x| x[0].sum().scale(0.7)));
    push("mean", vec![signed_param(&[2, 3, 4], 0.1, 1.5, r)], Box::new(|x| x[0].mean().scale(0.7)));
    push("sum_axes", vec![signed_param(&[2, 3, 4], 0.1, 1.5, r)], Box::new(|x| x[0].sum_axes(&[0, 2]).unwrap()));
    push("mean_axes", vec![signed_param(&[2, 3, 4], 0.1, 1.5, r)], Box::new(|x| x[0].mean_axes(&[1]).unwrap()));
    push(
        "matmul",
        vec![signed_param(&[3, 4], 0.1, 1.5, r), signed_param(&[4, 5], 0.1, 1.5, r)],
        Box::new(|x| x[0].matmul(&x[1]).unwrap()),
    );
    push(
        "matmul (batched)",
        vec![signed_param(&[2, 3, 4], 0.1, 1.5, r), signed_param(&[2, 4, 2], 0.1, 1.5, r)],
        Box::new(|x| x[0].matmul(&x[1]).unwrap()),
    );
    push("softmax", vec![signed_param(&[2, 3, 4], 0.0, 2.0, r)], Box::new(|x| x[0].softmax(1).unwrap()));
    push("softmax_channel", vec![signed_param(&[2, 3, 2, 2], 0.0, 2.0, r)], Box::new(|x| x[0].softmax_channel().unwrap()));
    push(
        "matmul_attention",
        vec![
            signed_param(&[2, 3, 4], 0.0, 1.0, r),
            signed_param(&[2, 5, 4], 0.0, 1.0, r),
            signed_param(&[2, 5, 3], 0.0, 1.0, r),
        ],
        Box::new(|x| matmul_attention(&x[0], &x[1], &x[2]).unwrap()),
    );
    push(
        "group_norm",
        vec![
            signed_param(&[2, 4, 3, 3], 0.0, 2.0, r),
            signed_param(&[4], 0.5, 1.5, r),
            signed_param(&[4], 0.0, 1.0, r),
        ],
        Box::new(|x| group_norm(&x[0], 2, &x[1], &x[2], 1e-5).unwrap()),
    );
    for (name, k, stride, pad, bias) in [
        ("conv2d 3x3 pad 1 + bias", 3, 1, 1, true),
        ("conv2d 3x3 stride 2", 3, 2, 1, false),
        ("conv2d 1x1 + bias", 1, 1, 0, true),
        ("conv2d 2x2 stride 2", 2, 2, 0, false),
    ] {
        let mut inputs = vec![signed_param(&[2, 2, 5, 5], 0.0, 1.0, r), signed_param(&[3, 2, k, k], 0.0, 1.0, r)];
        if bias {
            inputs.push(signed_param(&[3], 0.0, 1.0, r));
        }
        push(
            name,
            inputs,
            Box::new(move |x| x[0].conv2d(&x[1], x.get(2), stride, pad).unwrap()),
        );
    }
    push("max_pool2d", vec![signed_param(&[2, 2, 4, 4], 0.0, 2.0, r)], Box::new(|x| x[0].max_pool2d(2).unwrap()));
    push("avg_pool2d", vec![signed_param(&[2, 2, 4, 4], 0.0, 2.0, r)], Box::new(|x| x[0].avg_pool2d(2).unwrap()));
    push(
        "upsample_nearest2d",
        vec![signed_param(&[2, 2, 2, 3], 0.0, 2.0, r)],
        Box::new(|x| x[0].upsample_nearest2d(2).unwrap()),
    );
    push("reshape", vec![signed_param(&[2, 3, 4], 0.0, 2.0, r)], Box::new(|x| x[0].reshape(&[6, 4]).unwrap()));
    push("permute", vec![signed_param(&[2, 3, 4, 2], 0.0, 2.0, r)], Box::new(|x| x[0].permute(&[0, 2, 3, 1]).unwrap()));
    push("narrow", vec![signed_param(&[2, 5, 3], 0.0, 2.0, r)], Box::new(|x| x[0].narrow(1, 1, 3).unwrap()));
    push(
        "concat",
        vec![signed_param(&[2, 2, 3], 0.0, 2.0, r), signed_param(&[2, 3, 3], 0.0, 2.0, r)],
        Box::new(|x| Tensor::concat(&[&x[0], &x[1]], 1).unwrap()),
    );

    // losses, differentiated through a softmax of free logits
    let (y, _) = random_pair(2, 3, 3, 3, r);
    let y = Tensor::from_vec(&[2, 3, 3, 3], y).unwrap();
    let logits = |r: &mut ChaCha8Rng| signed_param(&[2, 3, 3, 3], 0.0, 2.0, r);
    let yc = y.clone();
    push("ce_loss", vec![logits(r)], Box::new(move |x| ce_loss(&yc, &x[0].softmax_channel().unwrap()).unwrap()));
    let yc = y.clone();
    push(
        "focal_loss",
        vec![logits(r)],
        Box::new(move |x| focal_loss(&yc, &x[0].softmax_channel().unwrap(), &FocalConfig { gamma_fl: 2.0 }).unwrap()),
    );
    let yc = y.clone();
    push(
        "normalized_deviation",
        vec![logits(r)],
        Box::new(move |x| normalized_deviation(&yc, &x[0].softmax_channel().unwrap(), 0.01).unwrap()),
    );
    for (name, weighting_mode, max_scope) in [
        ("ss_loss per-pixel", WeightingMode::PerPixelCe, MaxScope::Batch),
        ("ss_loss scalar", WeightingMode::ScalarCe, MaxScope::Batch),
        ("ss_loss per-sample max", WeightingMode::PerPixelCe, MaxScope::PerSample),
    ] {
        let cfg = SSLossConfig { weighting_mode, max_scope, ..SSLossConfig::default() };
        let yc = y.clone();
        push(name, vec![logits(r)], Box::new(move |x| ss_loss(&yc, &x[0].softmax_channel().unwrap(), &cfg).unwrap()));
    }
    let yc = y.clone();
    push(
        "ssfl_loss",
        vec![logits(r)],
        Box::new(move |x| {
            let cfg = MultiLossConfig { lambda_fl: 0.5, ..MultiLossConfig::default() };
            ssfl_loss(&yc, &x[0].softmax_channel().unwrap(), &cfg).unwrap()
        }),
    );
    let eps = standard_normal(&[3, 2, 2, 2], r);
    let sched = build_linear_schedule(50, 1e-3, 0.05, 1.0, 1.0).unwrap();
    let e = eps.clone();
    push("simple_loss", vec![signed_param(&[3, 2, 2, 2], 0.0, 2.0, r)], Box::new(move |x| simple_loss(&e, &x[0]).unwrap()));
    push(
        "p2_loss",
        vec![signed_param(&[3, 2, 2, 2], 0.0, 2.0, r)],
        Box::new(move |x| p2_loss(&eps, &x[0], &[3, 20, 49], &sched).unwrap()),
    );
    cases
}

/// Finite-difference checks of every differentiable op (tolerance
/// [`OP_TOL`]).
pub fn gradient_ops(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    op_cases(&mut r)
        .into_iter()
        .map(|(name, inputs, f)| {
            let out_shape = no_grad(|| f(&inputs)).shape().to_vec();
            let w = fd::probe_weights(&out_shape, &mut r);
            let loss = || probe(f(&inputs), &w);
            Check::new(name, fd::check(&loss, &inputs, FD_STEP, FD_FLOOR), OP_TOL)
        })
        .collect()
}

fn jitter(params: &[Tensor], r: &mut impl Rng) {
    for p in params {
        p.update_data(|d| d.iter_mut().for_each(|v| *v += r.gen_range(-0.2..0.2)));
    }
}

/// Layers and the tiny UNet in both head modes (tolerance [`COMPOSED_TOL`]).
pub fn gradient_composed(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let mut out = Vec::new();

    let x = signed_param(&[2, 4, 4, 4], 0.0, 1.0, &mut r);
    let temb = signed_param(&[2, 6], 0.0, 1.0, &mut r);
    let res = ResBlock::new(4, 8, 6, 2, &mut r);
    let mut params = vec![x.clone(), temb.clone()];
    for t in [&res.norm1.scale, &res.norm1.shift, &res.conv1.weight, &res.conv1.bias, &res.time_proj.weight] {
        params.push(t.clone());
    }
    let skip = res.skip.as_ref().unwrap();
    params.extend([res.time_proj.bias.clone(), res.norm2.scale.clone(), res.norm2.shift.clone()]);
    params.extend([res.conv2.weight.clone(), res.conv2.bias.clone(), skip.weight.clone(), skip.bias.clone()]);
    jitter(&params[2..], &mut r);
    let w = fd::probe_weights(&[2, 8, 4, 4], &mut r);
    let loss = || probe(res.forward(&x, &temb).unwrap(), &w);
    out.push(Check::new("ResBlock", fd::check(&loss, &params, FD_STEP, FD_FLOOR), COMPOSED_TOL));

    let attn = AttnBlock::new(4, 2, &mut r);
    let params = vec![
        x.clone(),
        attn.norm.scale.clone(),
        attn.norm.shift.clone(),
        attn.qkv.weight.clone(),
        attn.qkv.bias.clone(),
        attn.proj.weight.clone(),
        attn.proj.bias.clone(),
    ];
    jitter(&params[1..], &mut r);
    let w = fd::probe_weights(&[2, 4, 4, 4], &mut r);
    let loss = || probe(attn.forward(&x).unwrap(), &w);
    out.push(Check::new("AttnBlock", fd::check(&loss, &params, FD_STEP, FD_FLOOR), COMPOSED_TOL));

    let mlp = TimeMlp::new(6, 5, &mut r);
    let params = vec![temb.clone(), mlp.lin1.weight.clone(), mlp.lin1.bias.clone(), mlp.lin2.weight.clone(), mlp.lin2.bias.clone()];
    jitter(&params[1..], &mut r);
    let w = fd::probe_weights(&[2, 5], &mut r);
    let loss = || probe(mlp.forward(&temb).unwrap(), &w);
    out.push(Check::new("TimeMlp", fd::check(&loss, &params, FD_STEP, FD_FLOOR), COMPOSED_TOL));

    out.extend(gradient_unet(&mut r));
    out
}

/// Every parameter of the tiny preset, as noise predictor and as segmenter.
pub fn gradient_unet(r: &mut ChaCha8Rng) -> Vec<Check> {
    let cfg = UNetConfig::preset("tiny", 3, 3).unwrap();
    let x = signed_param(&[2, 3, 8, 8], 0.0, 1.0, r).with_requires_grad(false);
    let mut out = Vec::new();

    let model = UNetModel::with_mode(cfg.clone(), HeadMode::Pretrain, r).unwrap();
    let params = model.parameters();
    jitter(&params, r);
    let w = fd::probe_weights(&[2, 3, 8, 8], r);
    let loss = || probe(model.forward(&x, &[7, 830]).unwrap(), &w);
    out.push(Check::new(
        format!("tiny UNet noise predictor ({} parameters)", model.num_parameters()),
        fd::check(&loss, &params, FD_STEP, FD_FLOOR),
        COMPOSED_TOL,
    ));

    let mut seg = UNetModel::new(cfg, r).unwrap();
    seg.swap_to_segmentation_head(3, r).unwrap();
    let params = seg.parameters();
    jitter(&params, r);
    let (y, _) = random_pair(2, 3, 8, 8, r);
    let y = Tensor::from_vec(&[2, 3, 8, 8], y).unwrap();
    let lc = MultiLossConfig::default();
    let loss = || ssfl_loss(&y, &seg.segment(&x).unwrap(), &lc).unwrap();
    out.push(Check::new(
        format!("tiny UNet segmenter + SS+FL loss ({} parameters)", seg.num_parameters()),
        fd::check(&loss, &params, FD_STEP, FD_FLOOR),
        COMPOSED_TOL,
    ));
    out
}

fn random_schedule(r: &mut ChaCha8Rng) -> NoiseSchedule {
    let t_max = if r.gen_bool(0.3) { r.gen_range(2..20) } else { r.gen_range(20..=1000) };
    let k = r.gen_range(0.0..2.0);
    let gamma = r.gen_range(0.1..2.0);
    if r.gen_bool(0.5) {
        let start = 10f64.powf(r.gen_range(-5.0..-2.0));
        let end = r.gen_range(start..0.1);
        build_linear_schedule(t_max, start, end, k, gamma).unwrap()
    } else {
        let betas = (0..t_max).map(|_| 10f64.powf(r.gen_range(-5.0..-1.0))).collect();
        NoiseSchedule::from_betas(betas, k, gamma).unwrap()
    }
}

/// Monotonicity, posterior-variance bounds and grid-Bayes agreement over
/// `cases` random schedules.
pub fn schedule_suite(cases: usize, seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for case in 0..cases {
        let s = random_schedule(&mut r);
        let t_max = s.timesteps();
        let mono = (1..=t_max).all(|t| s.alpha_bar(t) < s.alpha_bar(t - 1) && s.snr(t) < s.snr(t - 1));
        out.push(Check::holds(format!("case {case}: alpha_bar and SNR strictly decrease"), mono));
        let k = s.p2_k();
        let p2_mono = (2..=t_max).all(|t| {
            let (a, b) = (s.p2_weight(t).unwrap(), s.p2_weight(t - 1).unwrap());
            // a tie is only acceptable when k + SNR moved by rounding alone
            let (u, v) = (k + s.snr(t), k + s.snr(t - 1));
            a > b || (a == b && (v - u) <= 1e-12 * v)
        });
        out.push(Check::holds(format!("case {case}: P2 weight increases"), p2_mono));
        let var_ok = (2..=t_max).all(|t| {
            let v = s.posterior_variance(t);
            v > 0.0 && v <= s.beta(t)
        });
        out.push(Check::holds(format!("case {case}: posterior variance in (0, beta_t]"), var_ok));

        let (mut mean_err, mut var_err) = (0.0f64, 0.0f64);
        for _ in 0..5 {
            let t = r.gen_range(2..=t_max);
            let x0 = r.gen_range(-1.0..1.0);
            let xt = s.alpha_bar(t).sqrt() * x0 + (1.0 - s.alpha_bar(t)).sqrt() * r.gen_range(-2.0..2.0);
            let (m, v) = bayes::posterior_moments(x0, xt, s.alpha_bar(t - 1), s.alpha(t));
            let (cx, c0) = s.posterior_mean_coeffs(t).unwrap();
            mean_err = mean_err.max((cx * xt + c0 * x0 - m).abs());
            var_err = var_err.max((s.posterior_variance(t) - v).abs() / v);
        }
        out.push(Check::new(format!("case {case}: posterior mean vs grid"), mean_err, 1e-4));
        out.push(Check::new(format!("case {case}: posterior variance vs grid (relative)"), var_err, 1e-4));
    }
    out
}

/// Closed-form coefficients against a step-by-step accumulation, the
/// reverse-step mean under the true noise, and the γ = 0 reduction.
pub fn diffusion_algebra(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    let mut schedules = vec![build_linear_schedule(1000, 1e-4, 0.02, 1.0, 1.0).unwrap()];
    schedules.extend((0..9).map(|_| random_schedule(&mut r)));
    let one = Tensor::ones(&[1]);
    let zero = Tensor::zeros(&[1]);
    for (i, s) in schedules.iter().enumerate() {
        // scalar accumulation of x_t = a_t·x_0 + noise with variance v_t
        let (mut prod, mut a, mut v) = (1.0f64, 1.0f64, 0.0f64);
        let (mut exact, mut recur) = (true, 0.0f64);
        for t in 1..=s.timesteps() {
            let beta = s.beta(t);
            prod *= 1.0 - beta;
            a *= (1.0 - beta).sqrt();
            v = (1.0 - beta) * v + beta;
            let ca = forward_sample(&one, t, &zero, s).unwrap().item();
            let ce = forward_sample(&zero, t, &one, s).unwrap().item();
            exact &= ca == prod.sqrt() && ce == (1.0 - prod).sqrt();
            recur = recur.max((ca - a).abs() / a).max((ce * ce - v).abs() / v);
        }
        out.push(Check::holds(format!("schedule {i}: forward_sample coefficients equal the accumulated product"), exact));
        out.push(Check::new(format!("schedule {i}: step-by-step recursion vs closed form (relative)"), recur, 1e-12));

        let mut worst_mu = 0.0f64;
        for _ in 0..10 {
            let t = r.gen_range(2..=s.timesteps());
            let x0 = standard_normal(&[2, 3, 4, 4], &mut r);
            let eps = standard_normal(&[2, 3, 4, 4], &mut r);
            let xt = forward_sample(&x0, t, &eps, s).unwrap();
            let mu_q = posterior_mean(&xt, &x0, t, s).unwrap().to_vec();
            let via_step = reverse_step(&xt, t, &eps, &Tensor::zeros(&[2, 3, 4, 4]), s).unwrap().to_vec();
            let via_mean = model_mean(&xt, t, &eps, s).unwrap().to_vec();
            for ((q, a), b) in mu_q.iter().zip(&via_step).zip(&via_mean) {
                worst_mu = worst_mu.max((q - a).abs()).max((q - b).abs());
            }
        }
        out.push(Check::new(format!("schedule {i}: reverse_step with true noise vs mu_q"), worst_mu, 1e-10));
    }

    for case in 0..10 {
        let t_max = r.gen_range(2..=1000);
        let s = build_linear_schedule(t_max, 1e-4, 0.02, r.gen_range(0.0..3.0), 0.0).unwrap();
        let n = r.gen_range(1..5);
        let eps = standard_normal(&[n, 3, 5, 5], &mut r);
        let pred = standard_normal(&[n, 3, 5, 5], &mut r);
        let t: Vec<usize> = (0..n).map(|_| r.gen_range(1..=t_max)).collect();
        let diff = (p2_loss(&eps, &pred, &t, &s).unwrap().item() - simple_loss(&eps, &pred).unwrap().item()).abs();
        out.push(Check::new(format!("gamma 0 case {case}: p2_loss vs simple_loss"), diff, 1e-12));
    }
    out
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Losses against scalar loops on `instances` random problems, plus the
/// focal/CE identity, perfect prediction and the empty-mask rule.
pub fn loss_oracles(instances: usize, seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for i in 0..instances {
        let d = losses::Dims { n: r.gen_range(1..4), c: r.gen_range(2..5), h: r.gen_range(2..6), w: r.gen_range(2..6) };
        let shape = [d.n, d.c, d.h, d.w];
        let (yv, hv) = random_pair(d.n, d.c, d.h, d.w, &mut r);
        let y = Tensor::from_vec(&shape, yv.clone()).unwrap();
        let yh = Tensor::from_vec(&shape, hv.clone()).unwrap();
        let c1 = r.gen_range(0.001..0.1);
        let beta_frac = r.gen_range(0.0..0.5);
        let gamma = r.gen_range(0.0..3.0);
        let lambda = r.gen_range(0.1..10.0);

        let mut err = rel(ce_loss(&y, &yh).unwrap().item(), losses::ce(&yv, &hv, &d));
        err = err.max(rel(
            focal_loss(&y, &yh, &FocalConfig { gamma_fl: gamma }).unwrap().item(),
            losses::focal(&yv, &hv, &d, gamma),
        ));
        let dev = normalized_deviation(&y, &yh, c1).unwrap().to_vec();
        for (a, b) in dev.iter().zip(losses::deviation(&yv, &hv, &d, c1)) {
            err = err.max(rel(*a, b));
        }
        for per_pixel in [true, false] {
            for per_sample in [false, true] {
                let ss = SSLossConfig {
                    c1,
                    beta_frac,
                    weighting_mode: if per_pixel { WeightingMode::PerPixelCe } else { WeightingMode::ScalarCe },
                    max_scope: if per_sample { MaxScope::PerSample } else { MaxScope::Batch },
                };
                let oracle_ss = losses::ss(&yv, &hv, &d, c1, beta_frac, per_pixel, per_sample);
                err = err.max(rel(ss_loss(&y, &yh, &ss).unwrap().item(), oracle_ss));
                let multi = MultiLossConfig { lambda_fl: lambda, ss, fl: FocalConfig { gamma_fl: gamma } };
                let oracle = oracle_ss + lambda * losses::focal(&yv, &hv, &d, gamma);
                err = err.max(rel(ssfl_loss(&y, &yh, &multi).unwrap().item(), oracle));
            }
        }
        out.push(Check::new(format!("instance {i}: losses vs scalar loops"), err, 1e-10));

        let fl0 = focal_loss(&y, &yh, &FocalConfig { gamma_fl: 0.0 }).unwrap().item();
        out.push(Check::new(format!("instance {i}: focal(gamma=0) vs CE"), (fl0 - ce_loss(&y, &yh).unwrap().item()).abs(), 1e-12));

        let cfg = MultiLossConfig::default();
        let perfect = [
            ce_loss(&y, &y).unwrap().item(),
            focal_loss(&y, &y, &cfg.fl).unwrap().item(),
            ss_loss(&y, &y, &cfg.ss).unwrap().item(),
            ssfl_loss(&y, &y, &cfg).unwrap().item(),
        ];
        out.push(Check::new(
            format!("instance {i}: perfect prediction"),
            perfect.iter().map(|v| v.abs()).fold(0.0, f64::max),
            1e-9,
        ));

        // one class everywhere against a spatially constant prediction: every map is
        // constant, so e ≡ 0 and no pixel is selected although CE > 0
        let single = Tensor::from_vec(&shape, {
            let mut v = vec![0.0; yv.len()];
            let k = r.gen_range(0..d.c);
            for s in 0..d.n {
                for px in 0..d.p() {
                    v[(s * d.c + k) * d.p() + px] = 1.0;
                }
            }
            v
        })
        .unwrap();
        // per-channel constants 1/2, 1/4, ..., exact in binary
        let uniform = Tensor::from_vec(&shape, {
            let mut v = vec![0.0; yv.len()];
            for s in 0..d.n {
                for c in 0..d.c {
                    let level = 0.5f64.powi((c + 1).min(d.c - 1) as i32);
                    v[(s * d.c + c) * d.p()..(s * d.c + c + 1) * d.p()].fill(level);
                }
            }
            v
        })
        .unwrap();
        let ss = SSLossConfig { c1, beta_frac, ..SSLossConfig::default() };
        out.push(Check::new(
            format!("instance {i}: empty mask gives 0"),
            ss_loss(&single, &uniform, &ss).unwrap().item().abs(),
            0.0,
        ));
    }
    out
}

/// One metrics case: a truth/prediction layout built from a confusion
/// matrix, with soft predictions whose argmax is the intended class.
pub struct MetricsCase {
    pub counts: Vec<Vec<u64>>,
    pub y: Tensor,
    pub y_hat: Tensor,
    pub truth: Vec<usize>,
    pub pred: Vec<usize>,
}

pub fn metrics_case(counts: Vec<Vec<u64>>, width: usize, r: &mut ChaCha8Rng) -> MetricsCase {
    let k = counts.len();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (t, row) in counts.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            pairs.extend(std::iter::repeat((t, p)).take(n as usize));
        }
    }
    pairs.shuffle(r);
    let total = pairs.len();
    assert!(total % width == 0, "pixel count must tile the width");
    let (n, h) = if (total / width) % 2 == 0 { (2, total / width / 2) } else { (1, total / width) };
    let p = h * width;
    let mut y = vec![0.0; total * k];
    let mut y_hat = vec![0.0; total * k];
    let mut truth = vec![0; total];
    let mut pred = vec![0; total];
    for (i, &(t, q)) in pairs.iter().enumerate() {
        let (s, px) = (i / p, i % p);
        y[(s * k + t) * p + px] = 1.0;
        let mut probs: Vec<f64> = (0..k).map(|_| r.gen_range(0.0..1.0)).collect();
        probs[q] = 1.5;
        let z: f64 = probs.iter().sum();
        for c in 0..k {
            y_hat[(s * k + c) * p + px] = probs[c] / z;
        }
        truth[i] = t;
        pred[i] = q;
    }
    let shape = [n, k, h, width];
    MetricsCase {
        counts,
        y: Tensor::from_vec(&shape, y).unwrap(),
        y_hat: Tensor::from_vec(&shape, y_hat).unwrap(),
        truth,
        pred,
    }
}

/// Twenty constructed cases: confusion counts must agree exactly and every
/// score must equal the from-the-definition value.
pub fn metrics_oracle(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let mut matrices: Vec<Vec<Vec<u64>>> = vec![
        vec![vec![3, 1], vec![2, 2]],
        vec![vec![4, 0, 0], vec![0, 0, 0], vec![0, 0, 4]],
        vec![vec![0, 4], vec![0, 4]],
        vec![vec![2, 1, 1], vec![0, 3, 1], vec![1, 0, 3]],
        vec![vec![5, 0, 0, 1], vec![0, 0, 2, 0], vec![1, 1, 0, 0], vec![0, 0, 0, 6]],
    ];
    while matrices.len() < 20 {
        let k = r.gen_range(2..5);
        let mut m: Vec<Vec<u64>> = (0..k).map(|_| (0..k).map(|_| r.gen_range(0..6)).collect()).collect();
        if r.gen_bool(0.3) {
            // an absent class
            let gone = r.gen_range(0..k);
            for row in 0..k {
                m[row][gone] = 0;
                m[gone][row] = 0;
            }
        }
        let total: u64 = m.iter().flatten().sum();
        let pad = (4 - total % 4) % 4 + if total == 0 { 4 } else { 0 };
        m[0][0] += pad;
        matrices.push(m);
    }
    let mut out = Vec::new();
    for (i, counts) in matrices.into_iter().enumerate() {
        let k = counts.len();
        let case = metrics_case(counts, 2, &mut r);
        let mut cm = ConfusionMatrix::new(k);
        cm.add_batch(&case.y, &case.y_hat).unwrap();
        let counts_ok = (0..k).all(|t| (0..k).all(|p| cm.count(t, p) == case.counts[t][p]));
        out.push(Check::holds(format!("case {i}: confusion counts"), counts_ok));

        let got = segmentation_metrics(&case.y, &case.y_hat).unwrap();
        let want = metrics::score(&case.truth, &case.pred, k);
        let scores_ok = got.accuracy == want.accuracy
            && got.precision == want.precision
            && got.recall == want.recall
            && got.f1 == want.f1
            && got
                .per_class
                .iter()
                .zip(&want.per_class)
                .all(|(g, w)| g.precision == w.0 && g.recall == w.1 && g.f1 == w.2);
        out.push(Check::holds(format!("case {i}: scores"), scores_ok));

        let perfect = segmentation_metrics(&case.y, &case.y).unwrap();
        let all_one = [perfect.accuracy, perfect.precision, perfect.recall, perfect.f1].iter().all(|&v| v == 1.0);
        out.push(Check::holds(format!("case {i}: perfect prediction gives 1.0"), all_one));
    }
    out
}
