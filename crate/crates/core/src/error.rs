use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("empty color patch: at least one pixel vector is required")]
    EmptyPatch,
    #[error("not a point on the color-name simplex: {0}")]
    NotSimplex(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("missing input file: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("training error: {0}")]
    Training(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("assignment count {m} outside 1..={k}")]
    AssignmentRange { m: usize, k: usize },
    #[error("word index {word} outside codebook of size {size}")]
    WordOutOfRange { word: usize, size: usize },
    #[error("duplicate image id {0}")]
    DuplicateImage(u32),
    #[error("entry ({0}, {1}) holds no images; idf undefined")]
    UndefinedEntry(u32, u32),
    #[error("histogram has no features")]
    ZeroFeatures,
    #[error("index is frozen and cannot be modified")]
    Frozen,
    #[error("index must be frozen before querying")]
    NotFrozen,
    #[error("metric not applicable: {0}")]
    MetricInapplicable(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format(_) | Error::InvalidDescriptor(_) | Error::NotSimplex(_) => 3,
            Error::Io(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => 3,
            Error::Io(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

/// Reading helpers treat a short read as a format problem.
pub(crate) fn eof_as_format(err: std::io::Error) -> Error {
    if err.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("unexpected end of file (truncated)".into())
    } else {
        Error::Io(err)
    }
}
