//! Dense tensors, reverse-mode autodiff, initialization, Adam, checkpoints.

mod adam;
mod checkpoint;
mod graph;
mod init;
mod params;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use graph::{Gradients, Graph, NodeId};
pub use init::{glorot_bound, glorot_init, lstm_bias, zero_bias};
pub(crate) use init::glorot_with;
pub use params::ParamRegistry;
pub use scalar::{DType, Scalar};
pub use tensor::{log_softmax, safe_ln, softmax, Tensor, PROB_FLOOR};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("duplicate parameter {0}")]
    DuplicateParam(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
