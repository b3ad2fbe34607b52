//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records primitives as they execute; [`Var`] handles point at
//! recorded nodes. [`Tape::backward`] sweeps the record in reverse once and
//! returns gradients for every trainable leaf reachable from the loss.

mod kernels;
mod ops;
mod tape;
mod tensor;

pub mod gradcheck;

use thiserror::Error;

pub use ops::{
    bce_loss, channel_contract, concat_cols, gru_ode_fused, lincomb, minibatch_discrimination,
    mse_loss, Elementwise, BCE_EPSILON,
};
pub(crate) use ops::rk4_combine;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("invalid shape {0:?}: extents must be positive")]
    InvalidShape(Vec<usize>),
    #[error("{op}: kernel {kernel:?} larger than (padded) input {input:?}")]
    KernelTooLarge {
        op: &'static str,
        kernel: (usize, usize),
        input: (usize, usize),
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this tape; record a new forward pass")]
    StaleTape,
    #[error("variable belongs to a different tape")]
    ForeignVar,
}
