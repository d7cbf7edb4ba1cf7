use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid noise specification: {0}")]
    SpecInvalid(String),

    #[error("matrix is numerically singular (condition estimate {condition:.3e}, cap {cap:.1e})")]
    SingularMatrix { condition: f64, cap: f64 },

    #[error("noise matrix has no cached inverse")]
    InverseMissing,

    #[error("label {label} outside 1..={k}")]
    LabelOutOfRange { label: i64, k: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("forward cache does not belong to this network")]
    CacheMismatch,

    #[error("parameter shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("loss correction requested but no inverse noise matrix supplied")]
    CorrectionMissing,

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("non-finite loss at epoch {epoch}, update {update}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        update: usize,
        detail: String,
    },

    #[error("number of classes must be at least 2, got {0}")]
    KInvalid(usize),

    #[error("estimated noise matrix is not invertible: {0}")]
    SingularEstimate(String),

    #[error("no usable anchor for class {class}: max posterior {max_posterior:.3e}")]
    EmptyClassSupport { class: usize, max_posterior: f64 },

    #[error("parse error in {}: row {row}, column {column}: {message}", path.display())]
    ParseError {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("too few samples: need at least {needed}, have {have}")]
    TooFewSamples { needed: usize, have: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable tag, used by the CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::SpecInvalid(_) => "SpecInvalid",
            Error::SingularMatrix { .. } => "SingularMatrix",
            Error::InverseMissing => "InverseMissing",
            Error::LabelOutOfRange { .. } => "LabelOutOfRange",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::CacheMismatch => "CacheMismatch",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::CorrectionMissing => "CorrectionMissing",
            Error::ConfigInvalid(_) => "ConfigInvalid",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::KInvalid(_) => "KInvalid",
            Error::SingularEstimate(_) => "SingularEstimate",
            Error::EmptyClassSupport { .. } => "EmptyClassSupport",
            Error::ParseError { .. } => "ParseError",
            Error::EmptyDataset => "EmptyDataset",
            Error::TooFewSamples { .. } => "TooFewSamples",
            Error::EmptyInput(_) => "EmptyInput",
            Error::Io { .. } => "Io",
            Error::Csv(_) => "Csv",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_label(label: usize, k: usize) -> Result<()> {
    if label == 0 || label > k {
        Err(Error::LabelOutOfRange {
            label: label as i64,
            k,
        })
    } else {
        Ok(())
    }
}
