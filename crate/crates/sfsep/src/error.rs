//! Error type shared across the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong between reading a mixture and writing a report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {reason}")]
    Wav { path: PathBuf, reason: String },

    #[error("unsupported wav format on {path}: {found} (need mono, PCM16 or float32)")]
    WavFormat { path: PathBuf, found: String },

    #[error("sample rate mismatch on {path}: file has {found} Hz, pipeline needs {expected} Hz (no silent resampling)")]
    SampleRate {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("signal too short: {len} samples, need at least {min}")]
    InputTooShort { len: usize, min: usize },

    #[error("window/hop pair does not satisfy the constant-overlap-add condition (fft {fft}, hop {hop})")]
    NonCola { fft: usize, hop: usize },

    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },

    #[error("invalid parameter: {context}")]
    InvalidParam { context: String },

    #[error("non-positive LSF increment at index {index}: {value}")]
    NonPositiveIncrement { index: usize, value: f64 },

    #[error("non-finite loss at optimization step {step} (stage: {stage})")]
    NonFiniteLoss { step: usize, stage: String },

    #[error("csv error on {path}: {reason}")]
    Csv { path: PathBuf, reason: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("reference signal is silent (all-zero); metric undefined")]
    SilentReference,
}

impl Error {
    /// Attach a path to a raw `io::Error`.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(context: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
        }
    }

    pub fn invalid(context: impl Into<String>) -> Self {
        Error::InvalidParam {
            context: context.into(),
        }
    }
}
