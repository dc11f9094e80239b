//! Dense tensors, reverse-mode gradients and the training substrate built on them.

pub mod checkpoint;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::Dropout;
pub use optim::{clip_grad_norm, lr_at, Adam, AdamConfig};
pub use params::ParamStore;
pub use scalar::{DType, Scalar};
pub use tape::{dropout_mask, Gradients, Neighborhoods, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op} expects rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("invalid axis {axis} for {op} on shape {shape:?}")]
    Axis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("index {index} out of range for size {size}")]
    Index { index: usize, size: usize },
    #[error("slice {start}..{start}+{len} exceeds axis size {size}")]
    SliceRange {
        start: usize,
        len: usize,
        size: usize,
    },
    #[error("dimension {dim} is not divisible into {heads} heads")]
    Heads { dim: usize, heads: usize },
    #[error("{0} requires at least one input")]
    Empty(&'static str),
    #[error("expected a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("gradient check step {0} outside [1e-7, 1e-3]")]
    Epsilon(f64),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
