//! Discrete diffusion noise schedules.
//!
//! All per-step quantities use 1-based `t` (`1..=T`). Index 0 holds the
//! clean-data values (`ᾱ_0 = 1`), which is also the time step used by the
//! segmentation network.

use crate::error::{Error, Result};

/// Parameters that fully determine a [`NoiseSchedule`]; recorded in
/// checkpoints and configs so training and sampling agree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub p2_k: f64,
    pub p2_gamma: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            p2_k: 1.0,
            p2_gamma: 1.0,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        build_linear_schedule(self.timesteps, self.beta_start, self.beta_end, self.p2_k, self.p2_gamma)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_var: Vec<f64>,
    snr: Vec<f64>,
    p2: Vec<f64>,
    k: f64,
    gamma: f64,
}

/// β linear in `t` from `beta_start` (t = 1) to `beta_end` (t = T).
pub fn build_linear_schedule(
    timesteps: usize,
    beta_start: f64,
    beta_end: f64,
    k: f64,
    gamma_p2: f64,
) -> Result<NoiseSchedule> {
    if timesteps == 0 {
        return Err(Error::Config("schedule needs at least one time step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "schedule bounds must satisfy 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )));
    }
    let betas = (0..timesteps)
        .map(|i| {
            if timesteps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (timesteps - 1) as f64
            }
        })
        .collect();
    NoiseSchedule::from_betas(betas, k, gamma_p2)
}

impl NoiseSchedule {
    /// Schedule from explicit `β_1..β_T`, each in `(0, 1)`.
    pub fn from_betas(betas: Vec<f64>, k: f64, gamma_p2: f64) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("schedule needs at least one time step".into()));
        }
        if let Some((i, b)) = betas.iter().enumerate().find(|(_, &b)| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Config(format!("beta_{} = {b} is outside (0, 1)", i + 1)));
        }
        if !(k >= 0.0) || !(gamma_p2 >= 0.0) {
            return Err(Error::Config(format!(
                "P2 parameters must be non-negative, got k = {k}, gamma = {gamma_p2}"
            )));
        }
        let t_max = betas.len();
        let mut s = Self {
            betas: Vec::with_capacity(t_max + 1),
            alphas: Vec::with_capacity(t_max + 1),
            alpha_bars: Vec::with_capacity(t_max + 1),
            posterior_var: Vec::with_capacity(t_max + 1),
            snr: Vec::with_capacity(t_max + 1),
            p2: Vec::with_capacity(t_max + 1),
            k,
            gamma: gamma_p2,
        };
        s.betas.push(0.0);
        s.alphas.push(1.0);
        s.alpha_bars.push(1.0);
        s.posterior_var.push(0.0);
        s.snr.push(f64::INFINITY);
        s.p2.push(p2_formula(f64::INFINITY, k, gamma_p2));
        for (i, &beta) in betas.iter().enumerate() {
            let alpha = 1.0 - beta;
            let prev_bar = s.alpha_bars[i];
            let bar = alpha * prev_bar;
            let snr = bar / (1.0 - bar);
            s.betas.push(beta);
            s.alphas.push(alpha);
            s.alpha_bars.push(bar);
            // the ratio is at most 1, so rounding cannot push the product above β
            s.posterior_var.push(beta * ((1.0 - prev_bar) / (1.0 - bar)));
            s.snr.push(snr);
            s.p2.push(p2_formula(snr, k, gamma_p2));
        }
        Ok(s)
    }

    /// Number of diffusion steps `T`.
    pub fn timesteps(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn p2_k(&self) -> f64 {
        self.k
    }

    pub fn p2_gamma(&self) -> f64 {
        self.gamma
    }

    pub fn check_step(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.timesteps() {
            return Err(Error::Index {
                what: "time step",
                index: t,
                lo,
                hi: self.timesteps(),
            });
        }
        Ok(())
    }

    // The getters below accept 0..=T and panic outside that range.

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// `ᾱ_t / (1 − ᾱ_t)`; infinite at `t = 0`.
    pub fn snr(&self, t: usize) -> f64 {
        self.snr[t]
    }

    /// `σ_q²(t) = (1 − α_t)(1 − ᾱ_{t−1}) / (1 − ᾱ_t)`; zero at `t = 1`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.posterior_var[t]
    }

    /// `1 / (k + SNR(t))^γ` for `1 ≤ t ≤ T`.
    pub fn p2_weight(&self, t: usize) -> Result<f64> {
        self.check_step(t, 1)?;
        Ok(self.p2[t])
    }

    /// Weights `(on x_t, on x_0)` of the Gaussian posterior mean
    /// `μ_q(x_t, x_0)` for `2 ≤ t ≤ T`.
    pub fn posterior_mean_coeffs(&self, t: usize) -> Result<(f64, f64)> {
        self.check_step(t, 2)?;
        let (alpha, bar, prev_bar) = (self.alphas[t], self.alpha_bars[t], self.alpha_bars[t - 1]);
        let coef_xt = alpha.sqrt() * (1.0 - prev_bar) / (1.0 - bar);
        let coef_x0 = prev_bar.sqrt() * (1.0 - alpha) / (1.0 - bar);
        Ok((coef_xt, coef_x0))
    }
}

/// Free-function form of [`NoiseSchedule::p2_weight`].
pub fn p2_weight(s: &NoiseSchedule, t: usize) -> Result<f64> {
    s.p2_weight(t)
}

/// Free-function form of [`NoiseSchedule::posterior_mean_coeffs`].
pub fn posterior_mean_coeffs(s: &NoiseSchedule, t: usize) -> Result<(f64, f64)> {
    s.posterior_mean_coeffs(t)
}

fn p2_formula(snr: f64, k: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return 1.0;
    }
    1.0 / (k + snr).powf(gamma)
}
