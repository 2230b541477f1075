//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! Every operation records a backward closure when at least one input
//! requires a gradient (and recording is not disabled with [`no_grad`]).
//! [`Tensor::backward`] on a single-element root walks the graph in reverse
//! topological order and accumulates into each tensor's gradient buffer.

pub mod checkpoint;
mod conv;
mod elementwise;
mod linalg;
mod norm;
pub mod optim;
mod pool;
mod reduce;
mod shape;
mod tensor;

pub use conv::conv2d;
pub use elementwise::{elementwise, ElementwiseOp};
pub use linalg::matmul_attention;
pub use norm::group_norm;
pub use optim::{adam_step, AdamState};
pub use pool::{pool_and_resize, ResizeKind};
pub use tensor::{is_grad_enabled, no_grad, Tensor};
