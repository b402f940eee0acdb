//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! The engine provides exactly the operator set the model needs: elementwise
//! arithmetic with suffix broadcasting, (batched) matrix products, temporal
//! convolution, pointwise nonlinearities, (causal) softmax, slicing and head
//! reshaping, reductions, running sums, layer/batch normalization, inverted
//! dropout, and a fused bidirectional LSTM. Construction order on a [`Tape`]
//! is a topological order, and [`Tape::backward`] visits each node exactly
//! once in reverse.
//!
//! [`grad_check`] is the oracle used throughout the test suite: analytic
//! gradients against central differences, with non-smooth coordinates (kinks)
//! detected and excluded rather than failed.

mod gradcheck;
mod nn;
mod ops;
mod store;
mod tape;
mod tensor;

use alloc::vec::Vec;

pub use gradcheck::{grad_check, GradCheckReport};
pub use nn::{BnStats, Mode};
pub use store::{AdamConfig, ParamEntry, ParamStore};
pub use tape::{DiffNode, LstmParamIds, NodeId, Tape};
pub use tensor::Tensor;

/// Errors from graph construction and the backward pass.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: unsupported operand shape {shape:?}")]
    BadRank { op: &'static str, shape: Vec<usize> },
    #[error("{op}: slice {start}..{start}+{len} out of range for shape {shape:?}")]
    BadSlice { op: &'static str, shape: Vec<usize>, start: usize, len: usize },
    #[error("{op}: element counts differ between {lhs:?} and {rhs:?}")]
    NumelMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("batch normalization in train mode needs at least 2 positions, got {rows}")]
    BatchTooSmall { rows: usize },
    #[error("unknown parameter {0}")]
    UnknownParam(alloc::string::String),
}
