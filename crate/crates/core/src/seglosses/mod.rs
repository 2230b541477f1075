//! Segmentation objectives and evaluation metrics.
//!
//! All losses take a one-hot target `y` and per-pixel class probabilities
//! `y_hat`, both `[N, C, H, W]`, and return a differentiable scalar. Sums are
//! divided by `N·P` (`P` pixels per patch) so magnitudes do not depend on the
//! patch size.

mod metrics;

pub use metrics::{
    argmax_channels, segmentation_metrics, write_metrics_csv, ClassMetrics, ConfusionMatrix,
    SegmentationMetrics,
};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gradcore::Tensor;

/// Added inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// How the CE factor in the SS loss is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightingMode {
    /// `−Σ_c y log ŷ` evaluated at each pixel.
    #[default]
    PerPixelCe,
    /// The batch CE loss, one number for every pixel.
    ScalarCe,
}

impl fmt::Display for WeightingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightingMode::PerPixelCe => "per_pixel",
            WeightingMode::ScalarCe => "scalar",
        })
    }
}

impl FromStr for WeightingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_pixel" => Ok(WeightingMode::PerPixelCe),
            "scalar" => Ok(WeightingMode::ScalarCe),
            other => Err(Error::Config(format!(
                "unknown weighting mode `{other}` (expected per_pixel or scalar)"
            ))),
        }
    }
}

/// Set over which the hard-example threshold `β·e_max` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaxScope {
    #[default]
    Batch,
    PerSample,
}

impl fmt::Display for MaxScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaxScope::Batch => "batch",
            MaxScope::PerSample => "per_sample",
        })
    }
}

impl FromStr for MaxScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(MaxScope::Batch),
            "per_sample" => Ok(MaxScope::PerSample),
            other => Err(Error::Config(format!(
                "unknown e_max scope `{other}` (expected batch or per_sample)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SSLossConfig {
    /// Stabiliser added to numerator and denominator of the normalisation.
    pub c1: f64,
    /// Pixels with `e > beta_frac·e_max` count as hard examples.
    pub beta_frac: f64,
    pub weighting_mode: WeightingMode,
    pub max_scope: MaxScope,
}

impl Default for SSLossConfig {
    fn default() -> Self {
        Self {
            c1: 0.01,
            beta_frac: 0.1,
            weighting_mode: WeightingMode::PerPixelCe,
            max_scope: MaxScope::Batch,
        }
    }
}

impl SSLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0) {
            return Err(Error::Config(format!("C1 must be positive, got {}", self.c1)));
        }
        if !(0.0..1.0).contains(&self.beta_frac) {
            return Err(Error::Config(format!("beta_frac must be in [0, 1), got {}", self.beta_frac)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalConfig {
    pub gamma_fl: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self { gamma_fl: 2.0 }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_fl >= 0.0) {
            return Err(Error::Config(format!("gamma_fl must be >= 0, got {}", self.gamma_fl)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiLossConfig {
    pub lambda_fl: f64,
    pub ss: SSLossConfig,
    pub fl: FocalConfig,
}

impl Default for MultiLossConfig {
    fn default() -> Self {
        Self {
            lambda_fl: 1.0,
            ss: SSLossConfig::default(),
            fl: FocalConfig::default(),
        }
    }
}

impl MultiLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_fl >= 0.0) {
            return Err(Error::Config(format!("lambda_fl must be >= 0, got {}", self.lambda_fl)));
        }
        self.ss.validate()?;
        self.fl.validate()
    }
}

/// Returns `(N, C, P)`.
fn check_pair(op: &'static str, y: &Tensor, y_hat: &Tensor) -> Result<(usize, usize, usize)> {
    if y.shape() != y_hat.shape() {
        return Err(Error::shape(op, y.shape(), y_hat.shape()));
    }
    match *y.shape() {
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => Err(Error::invalid_shape(op, format!("expected [N, C, H, W], got {:?}", y.shape()))),
    }
}

fn check_one_hot(op: &'static str, y: &Tensor) -> Result<()> {
    let (n, c, p) = match *y.shape() {
        [n, c, h, w] => (n, c, h * w),
        _ => unreachable!("shape checked by caller"),
    };
    let d = y.data();
    for s in 0..n {
        for px in 0..p {
            let total: f64 = (0..c).map(|k| d[(s * c + k) * p + px]).sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(Error::Domain {
                    op,
                    detail: format!("target is not one-hot at sample {s}, pixel {px} (sum {total})"),
                });
            }
        }
    }
    Ok(())
}

/// `y·log(ŷ + floor)` elementwise.
fn y_log_yhat(y: &Tensor, y_hat: &Tensor) -> Result<Tensor> {
    y.mul(&y_hat.add_scalar(LOG_FLOOR).log()?)
}

/// Cross-entropy `−(1/(N·P)) Σ y log(ŷ + 1e-12)`.
pub fn ce_loss(y: &Tensor, y_hat: &Tensor) -> Result<Tensor> {
    let (n, _, p) = check_pair("ce_loss", y, y_hat)?;
    check_one_hot("ce_loss", y)?;
    Ok(y_log_yhat(y, y_hat)?.sum().scale(-1.0 / (n * p) as f64))
}

/// Focal loss `−(1/(N·P)) Σ (1−ŷ)^γ y log(ŷ + 1e-12)`.
pub fn focal_loss(y: &Tensor, y_hat: &Tensor, cfg: &FocalConfig) -> Result<Tensor> {
    cfg.validate()?;
    let (n, _, p) = check_pair("focal_loss", y, y_hat)?;
    let ce = y_log_yhat(y, y_hat)?;
    let terms = if cfg.gamma_fl == 0.0 {
        ce
    } else {
        y_hat.rsub_scalar(1.0).powf(cfg.gamma_fl).mul(&ce)?
    };
    Ok(terms.sum().scale(-1.0 / (n * p) as f64))
}

/// `|(y − μ_y + C1)/(σ_y + C1) − (ŷ − μ_ŷ + C1)/(σ_ŷ + C1)|`, with mean and
/// population standard deviation taken over the last two (spatial) axes.
/// Works on a single `[H, W]` map or on a whole `[N, C, H, W]` batch.
pub fn normalized_deviation(y: &Tensor, y_hat: &Tensor, c1: f64) -> Result<Tensor> {
    if y.shape() != y_hat.shape() {
        return Err(Error::shape("normalized_deviation", y.shape(), y_hat.shape()));
    }
    let rank = y.ndim();
    if rank < 2 {
        return Err(Error::invalid_shape(
            "normalized_deviation",
            format!("need at least two spatial axes, got {:?}", y.shape()),
        ));
    }
    let axes = [rank - 2, rank - 1];
    let normalize = |x: &Tensor| -> Result<Tensor> {
        let centred = x.sub(&x.mean_axes(&axes)?)?;
        let sigma = centred.powf(2.0).mean_axes(&axes)?.sqrt_clamped(0.0);
        centred.add_scalar(c1).div(&sigma.add_scalar(c1))
    };
    Ok(normalize(y)?.sub(&normalize(y_hat)?)?.abs())
}

/// Structural-similarity loss over hard examples:
/// `(1/M) Σ f·w_CE·e` with `f = [e > β·e_max]`, `M = Σ f`; zero when `M = 0`.
pub fn ss_loss(y: &Tensor, y_hat: &Tensor, cfg: &SSLossConfig) -> Result<Tensor> {
    cfg.validate()?;
    let (n, c, p) = check_pair("ss_loss", y, y_hat)?;
    let e = normalized_deviation(y, y_hat, cfg.c1)?;

    let (mask, m) = {
        let ed = e.data();
        let per = c * p;
        let thresholds: Vec<f64> = match cfg.max_scope {
            MaxScope::Batch => vec![cfg.beta_frac * e.max_value(); n],
            MaxScope::PerSample => ed
                .chunks(per)
                .map(|s| cfg.beta_frac * s.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect(),
        };
        let mask: Vec<f64> = ed
            .iter()
            .enumerate()
            .map(|(i, &v)| if v > thresholds[i / per] { 1.0 } else { 0.0 })
            .collect();
        let m: f64 = mask.iter().sum();
        (mask, m)
    };
    if m == 0.0 {
        // keeps the graph attached; e is identically zero or below threshold
        return Ok(e.sum().scale(0.0));
    }
    let f = Tensor::from_vec(y.shape(), mask)?;
    let h = y.shape()[2];
    let weight = match cfg.weighting_mode {
        WeightingMode::PerPixelCe => y_log_yhat(y, y_hat)?
            .sum_axes(&[1])?
            .neg()
            .reshape(&[n, 1, h, p / h])?,
        WeightingMode::ScalarCe => y_log_yhat(y, y_hat)?.sum().scale(-1.0 / (n * p) as f64),
    };
    Ok(f.mul(&weight)?.mul(&e)?.sum().scale(1.0 / m))
}

/// `ss_loss + λ·focal_loss`.
pub fn ssfl_loss(y: &Tensor, y_hat: &Tensor, cfg: &MultiLossConfig) -> Result<Tensor> {
    cfg.validate()?;
    let ss = ss_loss(y, y_hat, &cfg.ss)?;
    if cfg.lambda_fl == 0.0 {
        return Ok(ss);
    }
    ss.add(&focal_loss(y, y_hat, &cfg.fl)?.scale(cfg.lambda_fl))
}

/// Objective used during fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    Ce,
    Ss,
    Focal,
    #[default]
    SsFocal,
}

impl LossKind {
    pub fn evaluate(self, y: &Tensor, y_hat: &Tensor, cfg: &MultiLossConfig) -> Result<Tensor> {
        match self {
            LossKind::Ce => ce_loss(y, y_hat),
            LossKind::Ss => ss_loss(y, y_hat, &cfg.ss),
            LossKind::Focal => focal_loss(y, y_hat, &cfg.fl),
            LossKind::SsFocal => ssfl_loss(y, y_hat, cfg),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Ce => "ce",
            LossKind::Ss => "ss",
            LossKind::Focal => "focal",
            LossKind::SsFocal => "ss_focal",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(LossKind::Ce),
            "ss" => Ok(LossKind::Ss),
            "focal" => Ok(LossKind::Focal),
            "ss_focal" => Ok(LossKind::SsFocal),
            other => Err(Error::Config(format!(
                "unknown loss `{other}` (expected ce, ss, focal or ss_focal)"
            ))),
        }
    }
}
