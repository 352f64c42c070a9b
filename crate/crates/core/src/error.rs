use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no files matched {0}")]
    NoFilesMatched(String),

    #[error("{path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("sequence shorter than block: {frames} frames, block size {block}")]
    SequenceTooShort { frames: usize, block: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite {what} at iteration {iter}{context}")]
    NonFinite {
        what: &'static str,
        iter: usize,
        context: String,
    },

    #[error("block {block}: {source}")]
    Block {
        block: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("out-of-order block index {index} (last stored {last})")]
    OutOfOrder { index: usize, last: usize },

    #[error("no qualifying background pixels (each needs at least 2 masked frames)")]
    NoBackground,

    #[error("frame too small for ssim: {h}x{w}, need at least 11x11")]
    FrameTooSmall { h: usize, w: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    /// True for failures of the numerical core rather than of input data or I/O.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite { .. } => true,
            Error::Block { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
