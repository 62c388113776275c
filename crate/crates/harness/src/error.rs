use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] twr_core::Error),
}

pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.into(),
        source,
    }
}

impl HarnessError {
    /// Process exit status: 2 for configuration problems, 3 for I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) | HarnessError::Core(_) => 2,
            HarnessError::Io { .. } => 3,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
