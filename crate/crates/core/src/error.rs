use std::path::PathBuf;

use thiserror::Error;

use crate::store::FormatError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("layer {layer}: {message}")]
    LayerShape { layer: usize, message: String },

    #[error("label {label} out of range for {num_classes} classes")]
    Label { label: usize, num_classes: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("model file: {0}")]
    Format(#[from] FormatError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("model has no Conv2D layers")]
    NoConvLayers,

    #[error("oversampled layer {layer}: {needed} filters requested from {available}")]
    OversampledLayer { layer: usize, needed: usize, available: usize },

    #[error("cannot rewire after layer {layer}: {reason}")]
    Rewiring { layer: usize, reason: String },

    #[error("invalid pruning plan: {0}")]
    InvalidPlan(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid trigger: {0}")]
    Trigger(String),

    #[error("need at least {needed} training pairs, got {got}")]
    InsufficientPairs { needed: usize, got: usize },

    #[error("accuracy vector length {got} does not match expected {expected}")]
    VectorLength { expected: usize, got: usize },

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("fingerprint disagreement within architecture {0}")]
    FingerprintDisagreement(String),

    #[error("no feasible configuration for architecture {0}")]
    NoFeasibleConfig(String),

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Parse { location: location.into(), message: message.into() }
    }
}
