use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] flat_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{0} exists and is not empty (pass --force to overwrite)")]
    NotEmpty(PathBuf),
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn format(path: &Path, message: impl Into<String>) -> Self {
        Error::Format { path: path.to_path_buf(), message: message.into() }
    }

    /// Process exit status: 2 configuration, 3 numerical divergence, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(flat_core::Error::Divergence { .. } | flat_core::Error::NonFinite(_)) => 3,
            Error::Core(_) | Error::Config(_) => 2,
            Error::Io { .. } | Error::Format { .. } | Error::NotEmpty(_) => 4,
        }
    }
}
