use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GmclError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    /// Malformed or unsupported file contents.
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    /// Files that parse but disagree with each other or with the dataset spec.
    #[error("{path}: {message}")]
    Consistency { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] gmcl_core::Error),
}

pub type Result<T> = std::result::Result<T, GmclError>;

impl GmclError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        GmclError::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        GmclError::Format { path: path.to_path_buf(), message: message.into() }
    }

    pub fn consistency(path: &Path, message: impl Into<String>) -> Self {
        GmclError::Consistency { path: path.to_path_buf(), message: message.into() }
    }

    /// Process exit code: 1 usage/configuration, 2 data or format, 3 divergence.
    pub fn exit_code(&self) -> u8 {
        match self {
            GmclError::Core(gmcl_core::Error::Config(_)) => 1,
            GmclError::Core(gmcl_core::Error::Divergence { .. }) => 3,
            _ => 2,
        }
    }
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| GmclError::io(path, e))
}

pub(crate) fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| GmclError::io(path, e))
}
