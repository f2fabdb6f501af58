//! Dense `f64` tensors with tape-based reverse-mode differentiation.

mod graph;
mod gradcheck;
pub mod kernels;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use graph::{Graph, Var, LOG_EPS};
pub use kernels::{gelu, l2_normalize, layer_norm, matmul, sigmoid, softmax};
pub use tensor::Tensor;

pub(crate) use graph::bce_value;
