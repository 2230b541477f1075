//! Matrix products, softmax and scaled dot-product attention.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `c = op(a) · op(b) + beta · c` for row-major storage, where `op(x)` is
/// `xᵀ` when the matching flag is set. `op(a)` is m×k and `op(b)` is k×n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm extents");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_trans { (1, k) } else { (n, 1) };
    // SAFETY: the assertion above guarantees every strided access stays
    // inside the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    /// `[M,K]·[K,N]` or batched `[B,M,K]·[B,K,N]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        let (batch, m, k, n) = match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n),
            ([b, m, k], [b2, k2, n]) if b == b2 && k == k2 => (*b, *m, *k, *n),
            _ => return Err(Error::shape("matmul", sa, sb)),
        };
        let mut out = vec![0.0; batch * m * n];
        {
            let (ad, bd) = (self.data(), other.data());
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &ad[i * m * k..],
                    false,
                    &bd[i * k * n..],
                    false,
                    &mut out[i * m * n..],
                    0.0,
                );
            }
        }
        let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            "matmul",
            shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, needs| {
                let (ad, bd) = (pa.data(), pb.data());
                let ga = needs[0].then(|| {
                    let mut ga = vec![0.0; batch * m * k];
                    for i in 0..batch {
                        gemm(m, n, k, &g[i * m * n..], false, &bd[i * k * n..], true, &mut ga[i * m * k..], 0.0);
                    }
                    ga
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![0.0; batch * k * n];
                    for i in 0..batch {
                        gemm(k, m, n, &ad[i * m * k..], true, &g[i * m * n..], false, &mut gb[i * k * n..], 0.0);
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Softmax along `axis`, stabilized by subtracting the running maximum.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid_shape(
                "softmax",
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = self.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let idx = |j: usize| base + j * inner;
                let max = (0..len).map(|j| out[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (out[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[idx(j)] /= total;
                }
            }
        }
        let y = out.clone();
        Ok(Tensor::from_op(
            "softmax",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dot: f64 = (0..len).map(|j| g[base + j * inner] * y[base + j * inner]).sum();
                        for j in 0..len {
                            let p = base + j * inner;
                            gx[p] = y[p] * (g[p] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Per-pixel softmax over the channel axis of an NCHW tensor.
    pub fn softmax_channel(&self) -> Result<Tensor> {
        if self.ndim() != 4 {
            return Err(Error::invalid_shape(
                "softmax_channel",
                format!("expected NCHW input, got {:?}", self.shape()),
            ));
        }
        self.softmax(1)
    }
}

/// Scaled dot-product attention `softmax(q·kᵀ/√d)·v` with
/// `q: [B,Lq,d]`, `k: [B,Lk,d]`, `v: [B,Lk,dv]`.
pub fn matmul_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (sq, sk, sv) = (q.shape(), k.shape(), v.shape());
    if sq.len() != 3 || sk.len() != 3 || sv.len() != 3 {
        return Err(Error::invalid_shape(
            "attention",
            format!("expected rank-3 q/k/v, got {sq:?}, {sk:?}, {sv:?}"),
        ));
    }
    if sq[0] != sk[0] || sq[2] != sk[2] {
        return Err(Error::shape("attention", sq, sk));
    }
    if sk[0] != sv[0] || sk[1] != sv[1] {
        return Err(Error::shape("attention", sk, sv));
    }
    let scale = 1.0 / (sq[2] as f64).sqrt();
    let scores = q.matmul(&k.permute(&[0, 2, 1])?)?.scale(scale);
    scores.softmax(2)?.matmul(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_2d() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(&[3, 1], &[1.0, 0.0, -1.0]);
        assert_eq!(a.matmul(&b).unwrap().to_vec(), vec![-2.0, -2.0]);
        assert!(b.matmul(&b).is_err());
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let x = t(&[1, 3, 1, 1], &[0.0, 0.0, 0.0]);
        for p in x.softmax_channel().unwrap().to_vec() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let y = t(&[1, 2, 1, 1], &[1000.0, 0.0]).softmax_channel().unwrap().to_vec();
        assert!((y[0] - 1.0).abs() < 1e-12 && y[1] >= 0.0 && y[1] < 1e-12);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn attention_single_key_returns_value() {
        let q = t(&[1, 1, 2], &[0.3, -0.7]);
        let k = t(&[1, 1, 2], &[1.5, 2.0]);
        let v = t(&[1, 1, 3], &[4.0, 5.0, 6.0]);
        assert_eq!(matmul_attention(&q, &k, &v).unwrap().to_vec(), vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn attention_identical_keys_average_values() {
        let q = t(&[1, 1, 2], &[0.3, -0.7]);
        let k = t(&[1, 2, 2], &[1.0, 2.0, 1.0, 2.0]);
        let v = t(&[1, 2, 1], &[2.0, 6.0]);
        let out = matmul_attention(&q, &k, &v).unwrap().item();
        assert!((out - 4.0).abs() < 1e-12);
    }
}
