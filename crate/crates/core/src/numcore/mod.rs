//! Dense tensors with reverse-mode automatic differentiation.

mod tape;
mod tensor;

pub use tape::{softmax_row, Binary, Reduce, Tape, Unary, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got {actual}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("expected {expected} elements, got {actual}")]
    DataLength { expected: usize, actual: usize },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("log of a non-positive value")]
    LogDomain,
    #[error("axis {axis} invalid for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("loss must be scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("backward already ran on this tape")]
    BackwardTwice,
}
