//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::check_gradient;
pub use graph::{softmax_rows, softplus, Gradients, Graph, Var, NORM_EPS};
pub use tensor::Tensor;
