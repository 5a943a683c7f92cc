//! From-scratch MLP machinery at 64-bit precision.
//!
//! Layers expose explicit forward/backward pairs; the models in [`model`]
//! chain them by hand so every gradient is analytic and checkable against
//! finite differences.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod target;
pub mod tensor;
pub mod train;

use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use layers::{BatchNorm, Dense, Mode};
pub use model::{Architecture, ForwardPass, Model, ModelConfig};
pub use target::encode_target;
pub use tensor::Matrix;
pub use train::{train, TrainConfig, TrainOutcome, TrainingSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch norm needs at least 2 samples in train mode, got {0}")]
    BatchTooSmall(usize),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NaNLoss { epoch: usize, batch: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("not a model checkpoint")]
    BadMagic,
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("checkpoint is truncated or has trailing data")]
    Corrupt,
    #[error("{0}")]
    Io(String),
}

pub(crate) fn shape_err(msg: impl Into<String>) -> NnError {
    NnError::ShapeMismatch(msg.into())
}
