//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records operations as they are evaluated; [`Tape::backward`]
//! walks it in reverse to produce gradients for every differentiable leaf.
//! The engine is generic over [`Real`] so the same graph code runs in `f32`
//! for training and `f64` for finite-difference verification.

mod check;
mod real;
mod tape;
mod tensor;

pub use check::{grad_check, relative_error};
pub use real::{Real, Strides};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::imq_gram_values;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not match {len} values")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },
    #[error("backward needs a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("variable was recorded on a different tape")]
    DetachedGraph,
    #[error("{0} needs at least one input")]
    EmptyInput(&'static str),
    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
}
