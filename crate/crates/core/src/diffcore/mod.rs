//! Dense 64-bit tensors with reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive applied to its nodes; calling
//! [`Graph::backward`] on a scalar node fills in gradients for every node
//! that (transitively) depends on a `requires_grad` leaf. All learnable
//! computation in [`crate::model`] is expressed with these primitives.

mod check;
mod checkpoint;
mod graph;
pub(crate) mod kernels;
mod tensor;

pub use check::{finite_diff_check, FiniteDiffReport};
pub use checkpoint::{read_named_tensors, write_named_tensors, CheckpointManifest};
pub use graph::{Graph, NodeId};
pub use kernels::{gelu, sigmoid, silu};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite values produced by {0}")]
    NonFinite(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Every differentiable primitive the graph knows about.
#[derive(Clone, Debug, PartialEq)]
pub enum PrimitiveKind {
    /// `[m×k] · [k×n]`.
    MatMul,
    /// Input `[C_in × T]`, weight `[C_out × C_in × K]`, zero padding on both ends.
    Conv1d {
        stride: usize,
        padding: usize,
    },
    /// Broadcasting addition.
    Add,
    /// Broadcasting element-wise product.
    Mul,
    /// Mean along `axis` (kept as length 1), or over everything when `None`.
    Mean {
        axis: Option<usize>,
    },
    Relu,
    /// Exact Gaussian-CDF form.
    Gelu,
    Silu,
    Softmax {
        axis: usize,
    },
    LogSoftmax {
        axis: usize,
    },
    /// Zero lanes stay zero.
    L2Normalize {
        axis: usize,
    },
    /// Rank-2 only.
    Transpose,
    Concat {
        axis: usize,
    },
    Slice {
        axis: usize,
        start: usize,
        len: usize,
    },
    Scale(f64),
    Exp,
    Log,
}

impl PrimitiveKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::MatMul => "matmul",
            Self::Conv1d { .. } => "conv1d",
            Self::Add => "add",
            Self::Mul => "mul",
            Self::Mean { .. } => "mean",
            Self::Relu => "relu",
            Self::Gelu => "gelu",
            Self::Silu => "silu",
            Self::Softmax { .. } => "softmax",
            Self::LogSoftmax { .. } => "log_softmax",
            Self::L2Normalize { .. } => "l2_normalize",
            Self::Transpose => "transpose",
            Self::Concat { .. } => "concat",
            Self::Slice { .. } => "slice",
            Self::Scale(_) => "scale",
            Self::Exp => "exp",
            Self::Log => "log",
        }
    }

    /// Fixed input count; `None` for variadic kinds.
    pub fn arity(&self) -> Option<usize> {
        match self {
            Self::MatMul | Self::Conv1d { .. } | Self::Add | Self::Mul => Some(2),
            Self::Concat { .. } => None,
            _ => Some(1),
        }
    }
}
