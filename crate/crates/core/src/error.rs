use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor argument had the wrong extent along a named axis.
    #[error("{op}: dimension mismatch on axis `{axis}`: expected {expected}, got {actual}")]
    Dimension {
        op: &'static str,
        axis: String,
        expected: usize,
        actual: usize,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid layer address: {0}")]
    Address(String),

    /// Malformed input data (dataset batches, image files, CSV tables).
    #[error("format error in {path}{}: {message}", offset.map(|o| format!(" at byte {o}")).unwrap_or_default())]
    Format {
        path: PathBuf,
        offset: Option<u64>,
        message: String,
    },

    #[error(transparent)]
    Weights(#[from] WeightFileError),

    #[error("config error: {0}")]
    Config(String),

    /// A loss or objective became NaN/inf during optimization.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Gradient ascent hit a non-finite objective; `trace` holds every
    /// completed epoch.
    #[error("non-finite objective at epoch {epoch}; ascent aborted")]
    Aborted {
        epoch: usize,
        trace: Box<crate::actmax::AscentTrace>,
    },

    #[error("I/O error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(
        op: &'static str,
        axis: impl Into<String>,
        expected: usize,
        actual: usize,
    ) -> Self {
        Error::Dimension {
            op,
            axis: axis.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        path: impl Into<PathBuf>,
        offset: Option<u64>,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }
}

/// Failures decoding an `MCNN` weight file.
#[derive(Debug, Error)]
pub enum WeightFileError {
    #[error("weight file: bad magic bytes {found:?} (expected \"MCNN\")")]
    BadMagic { found: Vec<u8> },

    #[error("weight file: unsupported version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("weight file: truncated while reading {what}")]
    Truncated { what: String },

    #[error("weight file: tensor `{name}` has shape {actual:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("weight file: model tensor `{name}` is missing")]
    Missing { name: String },

    #[error("weight file: unexpected tensor `{name}`")]
    Unexpected { name: String },

    #[error("weight file: tensor name is not valid UTF-8")]
    BadName,
}
