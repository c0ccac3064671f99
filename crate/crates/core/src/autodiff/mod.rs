//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every primitive in creation order. [`Tape::backward`]
//! walks it once in reverse and returns gradients for the requested leaves.
//! Tapes are single-threaded; independent tapes can be built concurrently.

mod tape;
mod tensor;

use thiserror::Error;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid operand of shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("data of length {len} does not fit shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{0}: no operands")]
    EmptyOperands(&'static str),
    #[error("backward needs an output of shape [1], got {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("node {0} is not a leaf")]
    NotALeaf(usize),
    #[error("node {0} is not on this tape")]
    UnknownNode(usize),
}
