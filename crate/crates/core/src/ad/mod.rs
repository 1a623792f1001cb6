//! Reverse-mode automatic differentiation over dense f64 matrices.
//!
//! Small by design: batched 2-D tensors, a recorded tape per expression,
//! deterministic backward order, and an Adam optimizer. See [`graph::Graph`]
//! for the op set.

mod adam;
mod check;
mod graph;
mod tensor;

pub use adam::AdamState;
pub use check::{away_from_kinks, grad_check, grad_check_coords};
pub use graph::{sigmoid, softplus, Gradients, Graph, NodeId};
pub use tensor::{gemm, GemmKind, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("{op}: incompatible shapes {shapes}")]
    Shape { op: &'static str, shapes: String },
    #[error("backward root must be a 1x1 scalar, got {0}x{1}")]
    NonScalarRoot(usize, usize),
    #[error("data length {got} does not match shape {rows}x{cols}")]
    DataLength {
        got: usize,
        rows: usize,
        cols: usize,
    },
}
