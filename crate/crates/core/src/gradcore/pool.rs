use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeKind {
    MaxPool,
    AvgPool,
    NearestUpsample,
}

fn nchw(op: &'static str, t: &Tensor) -> Result<[usize; 4]> {
    match *t.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::invalid_shape(op, format!("expected NCHW input, got {:?}", t.shape()))),
    }
}

/// Non-overlapping `factor × factor` pooling, or nearest-neighbour upsampling
/// by `factor`.
pub fn pool_and_resize(kind: ResizeKind, input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::invalid_shape("pool_and_resize", "factor must be positive"));
    }
    match kind {
        ResizeKind::MaxPool | ResizeKind::AvgPool => pool(kind, input, factor),
        ResizeKind::NearestUpsample => upsample(input, factor),
    }
}

fn pool(kind: ResizeKind, input: &Tensor, f: usize) -> Result<Tensor> {
    let [n, c, h, w] = nchw("pool", input)?;
    if h % f != 0 || w % f != 0 {
        return Err(Error::invalid_shape(
            "pool",
            format!("spatial extents {h}x{w} not divisible by factor {f}"),
        ));
    }
    let (ho, wo) = (h / f, w / f);
    let planes = n * c;
    let mut out = vec![0.0; planes * ho * wo];
    // flat input index that produced each output (max-pool only)
    let mut argmax = Vec::new();
    {
        let x = input.data();
        let inv = 1.0 / (f * f) as f64;
        if kind == ResizeKind::MaxPool {
            argmax.reserve(out.len());
        }
        for p in 0..planes {
            for oy in 0..ho {
                for ox in 0..wo {
                    let o = (p * ho + oy) * wo + ox;
                    let mut best = (f64::NEG_INFINITY, 0usize);
                    let mut total = 0.0;
                    for dy in 0..f {
                        for dx in 0..f {
                            let i = (p * h + oy * f + dy) * w + ox * f + dx;
                            total += x[i];
                            if x[i] > best.0 {
                                best = (x[i], i);
                            }
                        }
                    }
                    if kind == ResizeKind::MaxPool {
                        out[o] = best.0;
                        argmax.push(best.1);
                    } else {
                        out[o] = total * inv;
                    }
                }
            }
        }
    }
    let numel = input.numel();
    let name = if kind == ResizeKind::MaxPool { "max_pool" } else { "avg_pool" };
    Ok(Tensor::from_op(
        name,
        vec![n, c, ho, wo],
        out,
        vec![input.clone()],
        Box::new(move |g, _| {
            let mut gi = vec![0.0; numel];
            if kind == ResizeKind::MaxPool {
                for (&src, &gv) in argmax.iter().zip(g) {
                    gi[src] += gv;
                }
            } else {
                let inv = 1.0 / (f * f) as f64;
                for p in 0..planes {
                    for y in 0..h {
                        for x in 0..w {
                            gi[(p * h + y) * w + x] = g[(p * ho + y / f) * wo + x / f] * inv;
                        }
                    }
                }
            }
            vec![Some(gi)]
        }),
    ))
}

fn upsample(input: &Tensor, f: usize) -> Result<Tensor> {
    let [n, c, h, w] = nchw("upsample", input)?;
    let (ho, wo) = (h * f, w * f);
    let planes = n * c;
    let mut out = vec![0.0; planes * ho * wo];
    {
        let x = input.data();
        for p in 0..planes {
            for y in 0..ho {
                for xo in 0..wo {
                    out[(p * ho + y) * wo + xo] = x[(p * h + y / f) * w + xo / f];
                }
            }
        }
    }
    let numel = input.numel();
    Ok(Tensor::from_op(
        "nearest_upsample",
        vec![n, c, ho, wo],
        out,
        vec![input.clone()],
        Box::new(move |g, _| {
            let mut gi = vec![0.0; numel];
            for p in 0..planes {
                for y in 0..ho {
                    for xo in 0..wo {
                        gi[(p * h + y / f) * w + xo / f] += g[(p * ho + y) * wo + xo];
                    }
                }
            }
            vec![Some(gi)]
        }),
    ))
}

impl Tensor {
    pub fn max_pool2d(&self, factor: usize) -> Result<Tensor> {
        pool_and_resize(ResizeKind::MaxPool, self, factor)
    }

    pub fn avg_pool2d(&self, factor: usize) -> Result<Tensor> {
        pool_and_resize(ResizeKind::AvgPool, self, factor)
    }

    pub fn upsample_nearest2d(&self, factor: usize) -> Result<Tensor> {
        pool_and_resize(ResizeKind::NearestUpsample, self, factor)
    }
}
