//! Dense tensors, reverse-mode differentiation and a finite-difference
//! gradient oracle.

mod gradcheck;
pub mod kernels;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use kernels::{gelu, layer_norm, matmul, matmul_nt, softmax};
pub use params::{Gradients, ParamId, ParamStore};
pub use scalar::{DType, Scalar};
pub use tape::{BackwardFault, OpKind, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("{op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("softmax row {row} has no unmasked entries")]
    MaskedRow { row: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("function is not deterministic: evaluations gave {first} and {second}")]
    Nondeterministic { first: f64, second: f64 },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}
