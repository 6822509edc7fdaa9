//! Reverse-mode automatic differentiation over small dense tensors, with
//! gradients that can themselves be differentiated.

mod check;
mod graph;
mod mlp;
mod tensor;

pub use check::{finite_difference_check, FdReport};
pub use graph::{Gradients, Graph, Var};
pub use mlp::{forward_mlp, forward_mlp_values};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("layer {layer}: {detail}")]
    Layer { layer: usize, detail: String },
    #[error("gradient requested of a non-scalar output with shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("loss is not finite at perturbed point (coordinate {coord})")]
    NonFinite { coord: usize },
    #[error("finite-difference step {0} outside (0, 1e-2]")]
    Step(f64),
}
