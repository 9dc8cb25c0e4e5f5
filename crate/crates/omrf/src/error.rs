use std::path::{Path, PathBuf};

use omrf_core::Error as CoreError;

/// Errors surfaced by the runner and the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },

    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn read(path: &Path, source: std::io::Error) -> Self {
        Self::Read {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn write(path: &Path, source: std::io::Error) -> Self {
        Self::Write {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, message: impl std::fmt::Display) -> Self {
        Self::Format {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    /// Process exit status: 2 bad input or configuration, 3 state space too
    /// large to enumerate, 4 numerical failure, 1 failure to write output.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(CoreError::Capacity { .. }) => 3,
            Error::Core(CoreError::Numerical(_)) => 4,
            Error::Write { .. } => 1,
            _ => 2,
        }
    }
}
