use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Group normalization over NCHW input with per-channel affine `scale` and `shift`.
pub fn group_norm(input: &Tensor, groups: usize, scale: &Tensor, shift: &Tensor, eps: f64) -> Result<Tensor> {
    let &[n, c, h, w] = input.shape() else {
        return Err(Error::invalid_shape(
            "group_norm",
            format!("expected NCHW input, got {:?}", input.shape()),
        ));
    };
    if groups == 0 || c % groups != 0 {
        return Err(Error::Config(format!(
            "group_norm: {c} channels not divisible into {groups} groups"
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::Config(format!("group_norm: eps must be positive, got {eps}")));
    }
    if scale.shape() != [c] || shift.shape() != [c] {
        return Err(Error::shape("group_norm affine", scale.shape(), &[c]));
    }
    let per_group = c / groups;
    let spatial = h * w;
    let m = per_group * spatial;
    let count = n * groups;

    let mut xhat = vec![0.0; input.numel()];
    let mut inv_std = vec![0.0; count];
    {
        let x = input.data();
        for gi in 0..count {
            let block = &x[gi * m..(gi + 1) * m];
            let mean = block.iter().sum::<f64>() / m as f64;
            let var = block.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[gi] = istd;
            for (dst, &v) in xhat[gi * m..(gi + 1) * m].iter_mut().zip(block) {
                *dst = (v - mean) * istd;
            }
        }
    }
    let mut out = vec![0.0; xhat.len()];
    {
        let (sc, sh) = (scale.data(), shift.data());
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * spatial;
                for i in base..base + spatial {
                    out[i] = xhat[i] * sc[ch] + sh[ch];
                }
            }
        }
    }

    let pscale = scale.clone();
    Ok(Tensor::from_op(
        "group_norm",
        input.shape().to_vec(),
        out,
        vec![input.clone(), scale.clone(), shift.clone()],
        Box::new(move |g, needs| {
            let sc = pscale.data();
            let gx = needs[0].then(|| {
                let mut gx = vec![0.0; g.len()];
                for gi in 0..count {
                    let s = gi / groups;
                    let first_ch = (gi % groups) * per_group;
                    // dxhat = g * scale; dx = istd * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for k in 0..per_group {
                        let ch = first_ch + k;
                        let base = (s * c + ch) * spatial;
                        for i in base..base + spatial {
                            let d = g[i] * sc[ch];
                            sum_d += d;
                            sum_dx += d * xhat[i];
                        }
                    }
                    let (mean_d, mean_dx) = (sum_d / m as f64, sum_dx / m as f64);
                    for k in 0..per_group {
                        let ch = first_ch + k;
                        let base = (s * c + ch) * spatial;
                        for i in base..base + spatial {
                            gx[i] = inv_std[gi] * (g[i] * sc[ch] - mean_d - xhat[i] * mean_dx);
                        }
                    }
                }
                gx
            });
            let per_channel = |weighted: bool| {
                let mut acc = vec![0.0; c];
                for s in 0..n {
                    for (ch, a) in acc.iter_mut().enumerate() {
                        let base = (s * c + ch) * spatial;
                        *a += (base..base + spatial)
                            .map(|i| if weighted { g[i] * xhat[i] } else { g[i] })
                            .sum::<f64>();
                    }
                }
                acc
            };
            vec![gx, needs[1].then(|| per_channel(true)), needs[2].then(|| per_channel(false))]
        }),
    ))
}
