use std::fmt;

use thiserror::Error;

/// A `rows x cols` pair used in shape diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape(pub usize, pub usize);

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.0, self.1)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left} and {right}")]
    Shape {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("unknown preset `{0}` (expected one of A..I)")]
    UnknownPreset(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("precision mismatch: {0}")]
    Precision(String),

    #[error("missing stream `{0}`")]
    MissingStream(String),

    #[error("stream `{stream}` has dimension {found}, expected {expected}")]
    StreamDim {
        stream: String,
        expected: usize,
        found: usize,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },

    #[error("sequence has no voiced frame")]
    AllUnvoiced,

    #[error("no frame is voiced in both reference and hypothesis")]
    NoCommonVoiced,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape {
            op,
            left: Shape(left.0, left.1),
            right: Shape(right.0, right.1),
        }
    }

    pub(crate) fn config(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            location: location.into(),
            message: message.into(),
        }
    }
}
