//! Adam with bias correction.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    /// Fresh state with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(params: &[Tensor]) -> Self {
        Self::with_hyperparameters(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparameters(params: &[Tensor], beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            step: 0,
            beta1,
            beta2,
            eps,
            first_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }
}

/// One Adam update using each parameter's accumulated gradient
/// (a missing gradient counts as zero).
pub fn adam_step(params: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if params.len() != state.first_moment.len() {
        return Err(Error::shape(
            "adam_step",
            &[params.len()],
            &[state.first_moment.len()],
        ));
    }
    for (i, p) in params.iter().enumerate() {
        if state.first_moment[i].len() != p.numel() || state.second_moment[i].len() != p.numel() {
            return Err(Error::shape("adam_step", p.shape(), &[state.first_moment[i].len()]));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for (i, p) in params.iter().enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        p.with_grad(|grad| {
            p.update_data(|data| {
                for j in 0..data.len() {
                    let g = grad.map_or(0.0, |g| g[j]);
                    m[j] = b1 * m[j] + (1.0 - b1) * g;
                    v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            })
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let p = Tensor::parameter(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut st = AdamState::new(std::slice::from_ref(&p));
        adam_step(std::slice::from_ref(&p), &mut st, 1e-3).unwrap();
        assert_eq!(p.to_vec(), vec![1.0, -2.0, 0.5]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let p = Tensor::parameter(&[1], vec![1.0]).unwrap();
        p.scale(0.3).sum().backward().unwrap();
        let mut st = AdamState::new(std::slice::from_ref(&p));
        adam_step(std::slice::from_ref(&p), &mut st, 0.01).unwrap();
        // m̂ = g, v̂ = g², update = lr·g/(|g| + ε)
        let expect = 1.0 - 0.01 * 0.3 / (0.3 + 1e-8);
        assert!((p.item() - expect).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let p = Tensor::parameter(&[2], vec![0.0; 2]).unwrap();
        let q = Tensor::parameter(&[3], vec![0.0; 3]).unwrap();
        let mut st = AdamState::new(&[p]);
        assert!(adam_step(&[q], &mut st, 1e-3).is_err());
    }
}
