use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulation, learning or I/O pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Config text could not be parsed.
    #[error("config line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    /// A value violates a documented invariant.
    #[error("{0}")]
    Invariant(String),

    /// Array or vector widths do not line up.
    #[error("shape mismatch for {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    /// An operation needs at least one element.
    #[error("{0}")]
    Empty(&'static str),

    /// The rest image has no texture that optical flow could track.
    #[error("no trackable pattern in rest image")]
    NoTrackablePattern,

    /// Training produced a non-finite loss or parameter.
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    /// A persisted file has a bad header, version or checksum.
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
