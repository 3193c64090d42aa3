//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Every operation appends a node to a [`Tape`]; [`Tape::backward`] replays
//! the nodes in reverse. The engine is generic over [`Real`] so that the
//! same network code runs in `f32` for training and `f64` for gradient
//! checks.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{analytic_gradients, compare_gradients, grad_check, grad_check_many, relative_error};
pub use tape::{Tape, Var};
pub use tensor::{Real, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),
}
