use std::path::PathBuf;

use thiserror::Error;

use crate::field::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid dimensions must be positive and even, got {height}x{width}")]
    OddDimension { height: usize, width: usize },

    #[error("field has {channels} channels; at least one is required")]
    NoChannels { channels: usize },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: Shape, actual: Shape },

    #[error("buffer of length {actual} does not match shape {shape} ({expected} values)")]
    LengthMismatch {
        shape: Shape,
        expected: usize,
        actual: usize,
    },

    #[error("{what} is empty")]
    Empty { what: &'static str },

    #[error("timestep {t} outside 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("degenerate posterior at t={t}: 1 - alpha_bar_t = 0")]
    DegeneratePosterior { t: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("power-law fit needs at least 3 positive bins in range, found {found}")]
    InsufficientBins { found: usize },

    #[error("need at least {required} samples, got {actual}")]
    TooFewSamples { required: usize, actual: usize },

    #[error("non-finite loss at iteration {iteration}: {loss}")]
    NonFiniteLoss { iteration: usize, loss: f64 },

    #[error("bad magic 0x{found:08x} (expected 0x{expected:08x})")]
    BadMagic { expected: u32, found: u32 },

    #[error("truncated {what}: expected {expected} bytes, got {actual}")]
    Truncated {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Malformed {
            what,
            detail: detail.into(),
        }
    }

    /// True for failures caused by the filesystem rather than by content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
