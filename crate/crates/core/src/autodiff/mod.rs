//! Reverse-mode differentiation over the fixed set of layers the decoder needs.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{compensated_sum, Graph, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
