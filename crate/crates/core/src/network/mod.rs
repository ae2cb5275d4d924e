//! Twin-branch convolutional embedding network.
//!
//! Both branches run the same [`SiameseParams`]: three `3×3` convolutions
//! (4, 8, 8 maps, each with a nonlinearity and batch normalisation) followed
//! by fully connected layers of width 500, 500 and 5. Training minimises the
//! contrastive loss with Adam; the two images of every pair in a batch share
//! one normalisation batch.

mod checkpoint;
mod config;
mod gradcheck;
mod layers;
mod loss;
mod model;
mod params;
mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::Real;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_TAG};
pub use config::{
    ArchitectureConfig, LayerKind, LayerOrder, LayerShape, Nonlinearity, TrainConfig, EMBEDDING_LEN,
};
pub use gradcheck::{gradient_check, gradient_check_sampled, relative_error, GradientCheckReport};
pub use loss::{contrastive_loss, mismatch_count, pair_distance};
pub use model::Gradients;
pub use params::{ConvBlock, Dense, NamedTensor, NamedTensorMut, SiameseParams};
pub use train::{train, train_step, train_with_progress, Adam, LossTrace, StepOutcome, TraceEntry};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("input shape {got:?} does not match the network input {expected:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("feature vectors have different lengths: {left} and {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    DivergenceDetected {
        epoch: usize,
        batch: usize,
        trace: Box<LossTrace>,
    },
    #[error("non-finite value in network output or gradient")]
    NonFinite,
    #[error("checkpoint was written for architecture {found:016x}, expected {expected:016x}")]
    FingerprintMismatch { expected: u64, found: u64 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl NetworkError {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            NetworkError::InvalidArchitecture(_) => "InvalidArchitecture",
            NetworkError::InvalidConfig(_) => "InvalidConfig",
            NetworkError::ShapeMismatch { .. } => "ShapeMismatch",
            NetworkError::LengthMismatch { .. } => "LengthMismatch",
            NetworkError::EmptyTrainingSet => "EmptyTrainingSet",
            NetworkError::DivergenceDetected { .. } => "DivergenceDetected",
            NetworkError::NonFinite => "NonFinite",
            NetworkError::FingerprintMismatch { .. } => "FingerprintMismatch",
            NetworkError::CorruptCheckpoint(_) => "CorruptCheckpoint",
            NetworkError::Dataset(e) => e.kind(),
            NetworkError::Io { .. } => "Io",
        }
    }
}

/// Whether batch normalisation uses batch or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Finite embedding of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T> {
    values: Vec<T>,
}

impl<T: Real> FeatureVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self, NetworkError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NetworkError::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
