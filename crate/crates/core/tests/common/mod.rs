//! Independent reference implementations shared by the integration tests
//! and the acceptance harness. Nothing here calls the code under test except
//! to obtain values to compare.

#![allow(dead_code)]

pub mod suites;

use diffseg::Tensor;
use rand::Rng;

pub mod fd {
    use super::*;

    /// Central-difference gradient of `f` with respect to every element of
    /// each tensor in `params`, perturbing the data in place.
    pub fn numeric_grads(f: &dyn Fn() -> f64, params: &[Tensor], h: f64) -> Vec<Vec<f64>> {
        params
            .iter()
            .map(|p| {
                (0..p.numel())
                    .map(|i| {
                        let orig = p.data()[i];
                        p.update_data(|d| d[i] = orig + h);
                        let up = f();
                        p.update_data(|d| d[i] = orig - h);
                        let down = f();
                        p.update_data(|d| d[i] = orig);
                        (up - down) / (2.0 * h)
                    })
                    .collect()
            })
            .collect()
    }

    /// Largest `|a − n| / max(|a|, |n|, floor)` over all elements.
    pub fn max_rel_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>], floor: f64) -> f64 {
        analytic
            .iter()
            .flatten()
            .zip(numeric.iter().flatten())
            .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
            .fold(0.0, f64::max)
    }

    /// Runs `loss` once with gradients, then compares against finite
    /// differences. Returns the worst relative error.
    pub fn check(loss: &dyn Fn() -> Tensor, params: &[Tensor], h: f64, floor: f64) -> f64 {
        params.iter().for_each(Tensor::zero_grad);
        loss().backward().expect("scalar loss");
        let analytic: Vec<Vec<f64>> =
            params.iter().map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()])).collect();
        let value = || diffseg::gradcore::no_grad(|| loss().item());
        let numeric = numeric_grads(&value, params, h);
        max_rel_error(&analytic, &numeric, floor)
    }

    /// Fixed pseudo-random weights so a sum-of-products loss has no
    /// symmetric cancellations.
    pub fn probe_weights(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Values in `±[lo, hi]`, away from zero (kinks of relu/abs).
    pub fn away_from_zero(n: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let m = rng.gen_range(lo..hi);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect()
    }
}

pub mod bayes {
    //! Posterior `q(x_{t−1} | x_t, x_0)` for scalar data by direct numerical
    //! integration of prior × likelihood over a dense grid.

    fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
        -0.5 * (x - mean) * (x - mean) / var
    }

    /// `(mean, variance)` of the posterior, computed on a grid.
    /// `prev_bar = ᾱ_{t−1}`, `alpha = α_t`.
    pub fn posterior_moments(x0: f64, xt: f64, prev_bar: f64, alpha: f64) -> (f64, f64) {
        let beta = 1.0 - alpha;
        let prior_mean = prev_bar.sqrt() * x0;
        let prior_var = 1.0 - prev_bar;
        // bracket: both factors' natural scales
        let scale = prior_var.sqrt().min((beta / alpha).sqrt());
        let centre = {
            // rough centre from the likelihood peak and the prior
            let lik_mean = xt / alpha.sqrt();
            let lik_var = beta / alpha;
            (prior_mean * lik_var + lik_mean * prior_var) / (prior_var + lik_var)
        };
        let n = 40_001;
        let lo = centre - 20.0 * scale;
        let step = 40.0 * scale / (n - 1) as f64;
        let logs: Vec<f64> = (0..n)
            .map(|i| {
                let x = lo + i as f64 * step;
                log_normal(x, prior_mean, prior_var) + log_normal(xt, alpha.sqrt() * x, beta)
            })
            .collect();
        let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for (i, &l) in logs.iter().enumerate() {
            let x = lo + i as f64 * step;
            let w = (l - peak).exp();
            z += w;
            m1 += w * x;
            m2 += w * x * x;
        }
        let mean = m1 / z;
        (mean, m2 / z - mean * mean)
    }
}

pub mod losses {
    //! Scalar loops over `[N, C, H, W]` data, written directly from the
    //! defining formulas.

    pub const FLOOR: f64 = 1e-12;

    pub struct Dims {
        pub n: usize,
        pub c: usize,
        pub h: usize,
        pub w: usize,
    }

    impl Dims {
        pub fn at(&self, n: usize, c: usize, r: usize, col: usize) -> usize {
            ((n * self.c + c) * self.h + r) * self.w + col
        }
        pub fn p(&self) -> usize {
            self.h * self.w
        }
    }

    pub fn ce(y: &[f64], yh: &[f64], d: &Dims) -> f64 {
        let mut s = 0.0;
        for n in 0..d.n {
            for c in 0..d.c {
                for r in 0..d.h {
                    for col in 0..d.w {
                        let i = d.at(n, c, r, col);
                        s += y[i] * (yh[i] + FLOOR).ln();
                    }
                }
            }
        }
        -s / (d.n * d.p()) as f64
    }

    pub fn focal(y: &[f64], yh: &[f64], d: &Dims, gamma: f64) -> f64 {
        let mut s = 0.0;
        for n in 0..d.n {
            for c in 0..d.c {
                for r in 0..d.h {
                    for col in 0..d.w {
                        let i = d.at(n, c, r, col);
                        s += (1.0 - yh[i]).powf(gamma) * y[i] * (yh[i] + FLOOR).ln();
                    }
                }
            }
        }
        -s / (d.n * d.p()) as f64
    }

    /// Normalised deviation of one `h × w` map pair.
    pub fn deviation_map(y: &[f64], yh: &[f64], c1: f64) -> Vec<f64> {
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
            (m, var.sqrt())
        };
        let (my, sy) = stats(y);
        let (mh, sh) = stats(yh);
        y.iter()
            .zip(yh)
            .map(|(&a, &b)| ((a - my + c1) / (sy + c1) - (b - mh + c1) / (sh + c1)).abs())
            .collect()
    }

    pub fn deviation(y: &[f64], yh: &[f64], d: &Dims, c1: f64) -> Vec<f64> {
        let p = d.p();
        let mut e = vec![0.0; y.len()];
        for nc in 0..d.n * d.c {
            let map = deviation_map(&y[nc * p..(nc + 1) * p], &yh[nc * p..(nc + 1) * p], c1);
            e[nc * p..(nc + 1) * p].copy_from_slice(&map);
        }
        e
    }

    pub fn ss(y: &[f64], yh: &[f64], d: &Dims, c1: f64, beta: f64, per_pixel: bool, per_sample_max: bool) -> f64 {
        let e = deviation(y, yh, d, c1);
        let block = d.c * d.p();
        let global_max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ce_scalar = ce(y, yh, d);
        let (mut num, mut m) = (0.0, 0.0);
        for n in 0..d.n {
            let e_max = if per_sample_max {
                e[n * block..(n + 1) * block].iter().copied().fold(f64::NEG_INFINITY, f64::max)
            } else {
                global_max
            };
            for c in 0..d.c {
                for r in 0..d.h {
                    for col in 0..d.w {
                        let i = d.at(n, c, r, col);
                        if e[i] > beta * e_max {
                            let w = if per_pixel {
                                -(0..d.c).map(|k| {
                                    let j = d.at(n, k, r, col);
                                    y[j] * (yh[j] + FLOOR).ln()
                                }).sum::<f64>()
                            } else {
                                ce_scalar
                            };
                            num += w * e[i];
                            m += 1.0;
                        }
                    }
                }
            }
        }
        if m == 0.0 {
            0.0
        } else {
            num / m
        }
    }
}

pub mod metrics {
    //! Confusion counts and macro scores computed from label lists.

    pub struct Expected {
        pub accuracy: f64,
        pub precision: f64,
        pub recall: f64,
        pub f1: f64,
        pub per_class: Vec<(f64, f64, f64)>,
    }

    pub fn score(truth: &[usize], pred: &[usize], k: usize) -> Expected {
        let mut tp = vec![0u64; k];
        let mut fp = vec![0u64; k];
        let mut fneg = vec![0u64; k];
        let mut correct = 0;
        for (&t, &p) in truth.iter().zip(pred) {
            if t == p {
                tp[t] += 1;
                correct += 1;
            } else {
                fp[p] += 1;
                fneg[t] += 1;
            }
        }
        let div = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let mut per_class = Vec::new();
        let (mut sp, mut sr, mut sf, mut present) = (0.0, 0.0, 0.0, 0.0);
        for c in 0..k {
            let p = div(tp[c], tp[c] + fp[c]);
            let r = div(tp[c], tp[c] + fneg[c]);
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            per_class.push((p, r, f));
            if tp[c] + fp[c] + fneg[c] > 0 {
                sp += p;
                sr += r;
                sf += f;
                present += 1.0;
            }
        }
        let avg = |s: f64| if present == 0.0 { 0.0 } else { s / present };
        Expected {
            accuracy: div(correct, truth.len() as u64),
            precision: avg(sp),
            recall: avg(sr),
            f1: avg(sf),
            per_class,
        }
    }
}

/// Random one-hot target and softmax prediction of shape `[n, c, h, w]`.
pub fn random_pair(n: usize, c: usize, h: usize, w: usize, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let p = h * w;
    let mut y = vec![0.0; n * c * p];
    let mut yh = vec![0.0; n * c * p];
    for s in 0..n {
        for px in 0..p {
            y[(s * c + rng.gen_range(0..c)) * p + px] = 1.0;
            let logits: Vec<f64> = (0..c).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for k in 0..c {
                yh[(s * c + k) * p + px] = logits[k].exp() / z;
            }
        }
    }
    (y, yh)
}
