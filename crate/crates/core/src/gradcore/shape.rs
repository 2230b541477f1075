use std::sync::Arc;

use super::tensor::{numel_of, Tensor};
use crate::error::{Error, Result};

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Reorders dimensions: output dim `i` is input dim `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid_shape(
                "permute",
                format!("{perm:?} is not a permutation of {rank} axes"),
            ));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let mut in_strides = vec![1usize; rank];
        for d in (0..rank.saturating_sub(1)).rev() {
            in_strides[d] = in_strides[d + 1] * shape[d + 1];
        }
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();

        // source index for each output position
        let total = self.numel();
        let mut src = Vec::with_capacity(total);
        let mut counter = vec![0usize; rank];
        let mut offset = 0usize;
        for _ in 0..total {
            src.push(offset);
            for d in (0..rank).rev() {
                counter[d] += 1;
                offset += strides[d];
                if counter[d] < out_shape[d] {
                    break;
                }
                offset -= strides[d] * counter[d];
                counter[d] = 0;
            }
        }
        let out = {
            let data = self.data();
            src.iter().map(|&i| data[i]).collect()
        };
        let src = Arc::new(src);
        Ok(Tensor::from_op(
            "permute",
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gi = vec![0.0; g.len()];
                for (&s, &v) in src.iter().zip(g) {
                    gi[s] = v;
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// The slice `start..start + len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::invalid_shape(
                "narrow",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let (row, w, off) = (shape[axis] * inner, len * inner, start * inner);
        let mut out = Vec::with_capacity(outer * w);
        {
            let d = self.data();
            for o in 0..outer {
                out.extend_from_slice(&d[o * row + off..o * row + off + w]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let numel = self.numel();
        Ok(Tensor::from_op(
            "narrow",
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gi = vec![0.0; numel];
                for o in 0..outer {
                    gi[o * row + off..o * row + off + w].copy_from_slice(&g[o * w..(o + 1) * w]);
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(tensors: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::invalid_shape("concat", "no inputs"))?;
        let rank = first.ndim();
        if axis >= rank {
            return Err(Error::invalid_shape(
                "concat",
                format!("axis {axis} out of range for rank {rank}"),
            ));
        }
        for t in &tensors[1..] {
            let compatible = t.ndim() == rank
                && (0..rank).all(|d| d == axis || t.shape()[d] == first.shape()[d]);
            if !compatible {
                return Err(Error::shape("concat", first.shape(), t.shape()));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = tensors.iter().map(|t| t.shape()[axis] * inner).collect();
        let row: usize = widths.iter().sum();

        let mut out = Vec::with_capacity(outer * row);
        {
            let datas: Vec<_> = tensors.iter().map(|t| t.data()).collect();
            for o in 0..outer {
                for (d, &w) in datas.iter().zip(&widths) {
                    out.extend_from_slice(&d[o * w..(o + 1) * w]);
                }
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = row / inner;
        Ok(Tensor::from_op(
            "concat",
            shape,
            out,
            tensors.iter().map(|&t| t.clone()).collect(),
            Box::new(move |g, needs| {
                let mut start = 0;
                widths
                    .iter()
                    .zip(needs)
                    .map(|(&w, &need)| {
                        let off = start;
                        start += w;
                        need.then(|| {
                            let mut gi = Vec::with_capacity(outer * w);
                            for o in 0..outer {
                                gi.extend_from_slice(&g[o * row + off..o * row + off + w]);
                            }
                            gi
                        })
                    })
                    .collect()
            }),
        ))
    }
}
