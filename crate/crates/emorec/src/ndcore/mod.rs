//! Dense `f64` tensors with tape-based reverse-mode automatic differentiation.
//!
//! The surface is deliberately small: row-major 2-D tensors, the handful of
//! primitive operations needed to express linear projections, scaled
//! dot-product attention, softmax classification heads, and pairwise ranking
//! losses, and a [`Tape`] that records every tracked operation so a single
//! [`Tape::backward`] call yields gradients for all watched leaves.
//!
//! Tapes are rebuilt on every forward pass (define-by-run). A tape is
//! single-threaded; tensors that are not tracked on a tape are plain
//! immutable values and safe to share across threads.

mod tape;
mod tensor;

pub use tape::{Gradients, Mode, Tape, LOG_CLAMP};
pub use tensor::Tensor;

pub(crate) use tape::sigmoid_raw;

/// Handle to a node recorded on a [`Tape`].
pub type NodeId = usize;

/// Errors produced by tensor construction and tape operations.
#[derive(Debug, thiserror::Error)]
pub enum NdError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {shape:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        shape: Vec<usize>,
    },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    LengthMismatch { len: usize, shape: Vec<usize> },
    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { value: f64, index: usize },
    #[error("{op}: {name} = {value} outside {range}")]
    BadParameter {
        op: &'static str,
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("cross_entropy: label {label} out of range for {classes} classes (row {row})")]
    LabelOutOfRange {
        label: usize,
        classes: usize,
        row: usize,
    },
    #[error("{op}: row index {index} out of range for {rows} rows")]
    RowOutOfRange {
        op: &'static str,
        index: usize,
        rows: usize,
    },
    #[error("{op}: tensor is not tracked on this tape")]
    NotTracked { op: &'static str },
}
