//! Pointwise unary and binary operations with NumPy-style broadcasting.

use std::sync::Arc;

use super::tensor::{numel_of, Tensor};
use crate::error::{Error, Result};

/// Operation selector for [`elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Log,
    Sqrt,
    Power(f64),
    Negate,
    Relu,
    Silu,
    Abs,
}

impl ElementwiseOp {
    fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul | Self::Div)
    }
}

/// Dispatches one of the pointwise operations. Binary kinds require `b`.
pub fn elementwise(op: ElementwiseOp, a: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    match (op.is_binary(), b) {
        (true, Some(b)) => match op {
            ElementwiseOp::Add => a.add(b),
            ElementwiseOp::Sub => a.sub(b),
            ElementwiseOp::Mul => a.mul(b),
            ElementwiseOp::Div => a.div(b),
            _ => unreachable!(),
        },
        (true, None) => Err(Error::Usage(format!("{op:?} needs a second operand"))),
        (false, Some(_)) => Err(Error::Usage(format!("{op:?} is unary"))),
        (false, None) => match op {
            ElementwiseOp::Exp => Ok(a.exp()),
            ElementwiseOp::Log => a.log(),
            ElementwiseOp::Sqrt => a.sqrt(),
            ElementwiseOp::Power(p) => Ok(a.powf(p)),
            ElementwiseOp::Negate => Ok(a.neg()),
            ElementwiseOp::Relu => Ok(a.relu()),
            ElementwiseOp::Silu => Ok(a.silu()),
            ElementwiseOp::Abs => Ok(a.abs()),
            _ => unreachable!(),
        },
    }
}

/// Index maps from the broadcast output back into each operand.
/// `None` means the operand already has the output shape.
pub(crate) struct Broadcast {
    pub shape: Vec<usize>,
    pub lhs: Option<Vec<usize>>,
    pub rhs: Option<Vec<usize>>,
}

impl Broadcast {
    pub fn new(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        if a == b {
            return Ok(Self {
                shape: a.to_vec(),
                lhs: None,
                rhs: None,
            });
        }
        let rank = a.len().max(b.len());
        let pad = |s: &[usize]| {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(a), pad(b));
        let mut shape = Vec::with_capacity(rank);
        for (&da, &db) in pa.iter().zip(&pb) {
            shape.push(match (da, db) {
                _ if da == db => da,
                (1, d) | (d, 1) => d,
                _ => return Err(Error::shape(op, a, b)),
            });
        }
        let map = |padded: &[usize]| -> Option<Vec<usize>> {
            if padded == shape.as_slice() {
                return None;
            }
            Some(broadcast_index(&shape, padded))
        };
        Ok(Self {
            lhs: map(&pa),
            rhs: map(&pb),
            shape,
        })
    }
}

/// For each flat index of `out_shape`, the flat index into a tensor of
/// shape `src` (same rank, extents equal or 1) that broadcasts onto it.
pub(crate) fn broadcast_index(out_shape: &[usize], src: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let mut src_strides = vec![0usize; rank];
    let mut stride = 1;
    for d in (0..rank).rev() {
        src_strides[d] = if src[d] == 1 { 0 } else { stride };
        stride *= src[d];
    }
    let total = numel_of(out_shape);
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..total {
        idx.push(offset);
        for d in (0..rank).rev() {
            counter[d] += 1;
            offset += src_strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            offset -= src_strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    idx
}

fn reduce_into(map: &Option<Vec<usize>>, full: Vec<f64>, len: usize) -> Vec<f64> {
    match map {
        None => full,
        Some(idx) => {
            let mut out = vec![0.0; len];
            for (g, &i) in full.iter().zip(idx) {
                out[i] += g;
            }
            out
        }
    }
}

fn binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: fn(f64, f64) -> f64,
    // partial derivatives (d/da, d/db) given (a, b, out)
    df: fn(f64, f64, f64) -> (f64, f64),
) -> Result<Tensor> {
    let bc = Arc::new(Broadcast::new(op, a.shape(), b.shape())?);
    let n = numel_of(&bc.shape);
    let out: Vec<f64> = {
        let (ad, bd) = (a.data(), b.data());
        let at = |i: usize| bc.lhs.as_ref().map_or(i, |m| m[i]);
        let bt = |i: usize| bc.rhs.as_ref().map_or(i, |m| m[i]);
        if bc.lhs.is_none() && bc.rhs.is_none() {
            ad.iter().zip(bd.iter()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            (0..n).map(|i| f(ad[at(i)], bd[bt(i)])).collect()
        }
    };
    let (pa, pb) = (a.clone(), b.clone());
    let shape = bc.shape.clone();
    Ok(Tensor::from_op(
        op,
        shape,
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g, needs| {
            let (ad, bd) = (pa.data(), pb.data());
            let at = |i: usize| bc.lhs.as_ref().map_or(i, |m| m[i]);
            let bt = |i: usize| bc.rhs.as_ref().map_or(i, |m| m[i]);
            let mut ga = needs[0].then(|| Vec::with_capacity(g.len()));
            let mut gb = needs[1].then(|| Vec::with_capacity(g.len()));
            for (i, &gi) in g.iter().enumerate() {
                let (x, y) = (ad[at(i)], bd[bt(i)]);
                let (dx, dy) = df(x, y, f(x, y));
                if let Some(v) = ga.as_mut() {
                    v.push(gi * dx);
                }
                if let Some(v) = gb.as_mut() {
                    v.push(gi * dy);
                }
            }
            vec![
                ga.map(|v| reduce_into(&bc.lhs, v, ad.len())),
                gb.map(|v| reduce_into(&bc.rhs, v, bd.len())),
            ]
        }),
    ))
}

fn unary(
    op: &'static str,
    a: &Tensor,
    f: impl Fn(f64) -> f64,
    // derivative given x
    df: impl Fn(f64) -> f64 + Send + Sync + 'static,
) -> Tensor {
    let out: Vec<f64> = a.data().iter().map(|&x| f(x)).collect();
    let pa = a.clone();
    Tensor::from_op(
        op,
        a.shape().to_vec(),
        out,
        vec![a.clone()],
        Box::new(move |g, _| {
            let x = pa.data();
            vec![Some(g.iter().zip(x.iter()).map(|(&gi, &xi)| gi * df(xi)).collect())]
        }),
    )
}

/// Like [`unary`] for derivatives that reuse the output; keeps a copy of it.
fn unary_out(
    op: &'static str,
    a: &Tensor,
    f: impl Fn(f64) -> f64,
    // derivative given (x, f(x))
    df: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
) -> Tensor {
    let out: Vec<f64> = a.data().iter().map(|&x| f(x)).collect();
    let saved = out.clone();
    let pa = a.clone();
    Tensor::from_op(
        op,
        a.shape().to_vec(),
        out,
        vec![a.clone()],
        Box::new(move |g, _| {
            let x = pa.data();
            let grad = g
                .iter()
                .zip(x.iter().zip(&saved))
                .map(|(&gi, (&xi, &yi))| gi * df(xi, yi))
                .collect();
            vec![Some(grad)]
        }),
    )
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary("add", self, other, |a, b| a + b, |_, _, _| (1.0, 1.0))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary("sub", self, other, |a, b| a - b, |_, _, _| (1.0, -1.0))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary("mul", self, other, |a, b| a * b, |a, b, _| (b, a))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        binary(
            "div",
            self,
            other,
            |a, b| a / b,
            |_, b, out| (1.0 / b, -out / b),
        )
    }

    pub fn exp(&self) -> Tensor {
        unary_out("exp", self, f64::exp, |_, y| y)
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&self) -> Result<Tensor> {
        self.check_positive("log")?;
        Ok(unary("log", self, f64::ln, |x| 1.0 / x))
    }

    /// `ln(max(x, floor))`; gradient is zero where the floor is active.
    pub fn log_clamped(&self, floor: f64) -> Result<Tensor> {
        if floor <= 0.0 {
            return Err(Error::Domain {
                op: "log_clamped",
                detail: format!("floor must be positive, got {floor}"),
            });
        }
        Ok(unary(
            "log_clamped",
            self,
            move |x| x.max(floor).ln(),
            move |x| if x > floor { 1.0 / x } else { 0.0 },
        ))
    }

    /// Square root; every input must be strictly positive.
    pub fn sqrt(&self) -> Result<Tensor> {
        self.check_positive("sqrt")?;
        Ok(unary_out("sqrt", self, f64::sqrt, |_, y| 0.5 / y))
    }

    /// `sqrt(max(x, floor))`; gradient is zero where the floor is active.
    pub fn sqrt_clamped(&self, floor: f64) -> Tensor {
        let floor = floor.max(0.0);
        unary_out(
            "sqrt_clamped",
            self,
            move |x| x.max(floor).sqrt(),
            move |x, y| if x > floor { 0.5 / y } else { 0.0 },
        )
    }

    pub fn powf(&self, p: f64) -> Tensor {
        unary("powf", self, move |x| x.powf(p), move |x| {
            if p == 0.0 {
                0.0
            } else {
                p * x.powf(p - 1.0)
            }
        })
    }

    pub fn neg(&self) -> Tensor {
        unary("neg", self, |x| -x, |_| -1.0)
    }

    pub fn relu(&self) -> Tensor {
        unary("relu", self, |x| x.max(0.0), |x| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&self) -> Tensor {
        unary("silu", self, |x| x * sigmoid(x), |x| {
            let s = sigmoid(x);
            s * (1.0 + x * (1.0 - s))
        })
    }

    pub fn abs(&self) -> Tensor {
        unary("abs", self, f64::abs, |x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        unary("scale", self, move |x| x * factor, move |_| factor)
    }

    pub fn add_scalar(&self, value: f64) -> Tensor {
        unary("add_scalar", self, move |x| x + value, |_| 1.0)
    }

    /// `value - x`.
    pub fn rsub_scalar(&self, value: f64) -> Tensor {
        unary("rsub_scalar", self, move |x| value - x, |_| -1.0)
    }

    fn check_positive(&self, op: &'static str) -> Result<()> {
        let data = self.data();
        if let Some((i, &x)) = data.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
            return Err(Error::Domain {
                op,
                detail: format!("non-positive input {x} at flat index {i}"),
            });
        }
        Ok(())
    }
}
