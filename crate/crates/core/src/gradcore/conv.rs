//! 2-D cross-correlation over NCHW tensors, lowered to GEMM via im2col.

use super::linalg::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Output columns `lo..hi` whose input column `ox·stride + kx − pad`
    /// lies inside the image.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let Geometry { w, stride, pad, w_out, .. } = *self;
        let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
        // largest ox with ox·stride + kx − pad ≤ w − 1
        let hi = if w + pad < kx + 1 { 0 } else { ((w + pad - kx - 1) / stride + 1).min(w_out) };
        (lo.min(hi), hi)
    }

    fn im2col(&self, img: &[f64], cols: &mut [f64]) {
        let Geometry { h, w, k, stride, pad, h_out, w_out, .. } = *self;
        let mut row = 0;
        for c in 0..self.c_in {
            let plane = &img[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let (lo, hi) = self.valid_cols(kx);
                    let dst = &mut cols[row * h_out * w_out..(row + 1) * h_out * w_out];
                    for oy in 0..h_out {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let line = &mut dst[oy * w_out..(oy + 1) * w_out];
                        if iy < 0 || iy >= h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        line[..lo].fill(0.0);
                        line[hi..].fill(0.0);
                        if stride == 1 {
                            let start = lo + kx - pad;
                            line[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        } else {
                            for (ox, v) in line[lo..hi].iter_mut().enumerate() {
                                *v = src[(ox + lo) * stride + kx - pad];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        let Geometry { h, w, k, stride, pad, h_out, w_out, .. } = *self;
        let mut row = 0;
        for c in 0..self.c_in {
            let plane = &mut img[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let (lo, hi) = self.valid_cols(kx);
                    let src = &cols[row * h_out * w_out..(row + 1) * h_out * w_out];
                    for oy in 0..h_out {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let line = &src[oy * w_out + lo..oy * w_out + hi];
                        if stride == 1 {
                            let start = lo + kx - pad;
                            for (d, &v) in dst[start..start + hi - lo].iter_mut().zip(line) {
                                *d += v;
                            }
                        } else {
                            for (ox, &v) in line.iter().enumerate() {
                                dst[(ox + lo) * stride + kx - pad] += v;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Cross-correlation of `input: [N,Ci,H,W]` with `kernel: [Co,Ci,K,K]`
/// plus an optional per-output-channel `bias: [Co]`.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (&[n, c_in, h, w], &[c_out, kc_in, k, k2]) = (input.shape(), kernel.shape()) else {
        return Err(Error::invalid_shape(
            "conv2d",
            format!(
                "expected NCHW input and OIKK kernel, got {:?} and {:?}",
                input.shape(),
                kernel.shape()
            ),
        ));
    };
    if kc_in != c_in || k != k2 {
        return Err(Error::shape("conv2d", input.shape(), kernel.shape()));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::shape("conv2d bias", b.shape(), &[c_out]));
        }
    }
    if stride == 0 || h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::invalid_shape(
            "conv2d",
            format!("stride {stride}, padding {padding} and kernel {k} give no output for {h}x{w}"),
        ));
    }
    let geo = Geometry {
        c_in,
        h,
        w,
        k,
        stride,
        pad: padding,
        h_out: (h + 2 * padding - k) / stride + 1,
        w_out: (w + 2 * padding - k) / stride + 1,
    };
    let (rows, cols_n) = (geo.rows(), geo.cols());
    let in_sz = c_in * h * w;
    let out_sz = c_out * cols_n;

    let mut out = vec![0.0; n * out_sz];
    {
        let x = input.data();
        let wt = kernel.data();
        let mut cols = vec![0.0; if geo.is_pointwise() { 0 } else { rows * cols_n }];
        for s in 0..n {
            let img = &x[s * in_sz..(s + 1) * in_sz];
            let cols_ref: &[f64] = if geo.is_pointwise() {
                img
            } else {
                geo.im2col(img, &mut cols);
                &cols
            };
            let dst = &mut out[s * out_sz..(s + 1) * out_sz];
            if let Some(b) = bias {
                for (co, &bv) in b.data().iter().enumerate() {
                    dst[co * cols_n..(co + 1) * cols_n].fill(bv);
                }
            }
            gemm(c_out, rows, cols_n, &wt, false, cols_ref, false, dst, if bias.is_some() { 1.0 } else { 0.0 });
        }
    }

    let mut parents = vec![input.clone(), kernel.clone()];
    parents.extend(bias.cloned());
    let (pin, pker) = (input.clone(), kernel.clone());
    let has_bias = bias.is_some();
    Ok(Tensor::from_op(
        "conv2d",
        vec![n, c_out, geo.h_out, geo.w_out],
        out,
        parents,
        Box::new(move |g, needs| {
            let x = pin.data();
            let wt = pker.data();
            let mut gin = needs[0].then(|| vec![0.0; n * in_sz]);
            let mut gker = needs[1].then(|| vec![0.0; c_out * rows]);
            let mut cols = vec![0.0; rows * cols_n];
            let mut gcols = vec![0.0; if geo.is_pointwise() { 0 } else { rows * cols_n }];
            for s in 0..n {
                let gs = &g[s * out_sz..(s + 1) * out_sz];
                if let Some(gk) = gker.as_mut() {
                    let img = &x[s * in_sz..(s + 1) * in_sz];
                    let cols_ref: &[f64] = if geo.is_pointwise() {
                        img
                    } else {
                        geo.im2col(img, &mut cols);
                        &cols
                    };
                    gemm(c_out, cols_n, rows, gs, false, cols_ref, true, gk, 1.0);
                }
                if let Some(gi) = gin.as_mut() {
                    let dst = &mut gi[s * in_sz..(s + 1) * in_sz];
                    if geo.is_pointwise() {
                        gemm(rows, c_out, cols_n, &wt, true, gs, false, dst, 0.0);
                    } else {
                        gemm(rows, c_out, cols_n, &wt, true, gs, false, &mut gcols, 0.0);
                        geo.col2im(&gcols, dst);
                    }
                }
            }
            let mut grads = vec![gin, gker];
            if has_bias {
                grads.push(needs[2].then(|| {
                    let mut gb = vec![0.0; c_out];
                    for s in 0..n {
                        for (co, acc) in gb.iter_mut().enumerate() {
                            let base = s * out_sz + co * cols_n;
                            *acc += g[base..base + cols_n].iter().sum::<f64>();
                        }
                    }
                    gb
                }));
            }
            grads
        }),
    ))
}

impl Tensor {
    pub fn conv2d(&self, kernel: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
        conv2d(self, kernel, bias, stride, padding)
    }
}
