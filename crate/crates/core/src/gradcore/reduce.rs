use std::sync::Arc;

use super::elementwise::broadcast_index;
use super::tensor::{numel_of, Tensor};
use crate::error::{Error, Result};

impl Tensor {
    /// Sum of all elements as a scalar tensor.
    pub fn sum(&self) -> Tensor {
        let total = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum",
            Vec::new(),
            vec![total],
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        self.sum().scale(1.0 / self.numel() as f64)
    }

    /// Sums over `axes`, keeping them as extent-1 dimensions.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        let mut out_shape = shape.clone();
        for &ax in axes {
            if ax >= shape.len() {
                return Err(Error::invalid_shape(
                    "sum_axes",
                    format!("axis {ax} out of range for shape {shape:?}"),
                ));
            }
            out_shape[ax] = 1;
        }
        let map = Arc::new(broadcast_index(&shape, &out_shape));
        let mut out = vec![0.0; numel_of(&out_shape)];
        for (&x, &o) in self.data().iter().zip(map.iter()) {
            out[o] += x;
        }
        Ok(Tensor::from_op(
            "sum_axes",
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(map.iter().map(|&o| g[o]).collect())]),
        ))
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor> {
        let count: usize = axes.iter().filter_map(|&a| self.shape().get(a)).product();
        Ok(self.sum_axes(axes)?.scale(1.0 / count as f64))
    }

    /// Largest element (value only).
    pub fn max_value(&self) -> f64 {
        self.data().iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_parameters_gives_unit_grads() {
        let p = Tensor::parameter(&[2, 3], vec![0.5; 6]).unwrap();
        p.sum().backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn sum_axes_keeps_dims() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = x.sum_axes(&[1]).unwrap();
        assert_eq!(s.shape(), &[2, 1]);
        assert_eq!(s.to_vec(), vec![6.0, 15.0]);
        let m = x.mean_axes(&[0]).unwrap();
        assert_eq!(m.to_vec(), vec![2.5, 3.5, 4.5]);
    }
}
