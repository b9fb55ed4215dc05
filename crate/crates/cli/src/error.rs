use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("malformed input: {0}")]
    Input(String),

    #[error(transparent)]
    Solver(#[from] nsp_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("theory check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn input(path: &Path, msg: impl std::fmt::Display) -> Self {
        CliError::Input(format!("{}: {msg}", path.display()))
    }

    /// 1 malformed input, 2 divergence, 3 I/O failure, 4 failed theory check.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Solver(e) => match e {
                nsp_core::Error::Diverged { .. } | nsp_core::Error::NonFinite { .. } => 2,
                _ => 1,
            },
            CliError::Io { .. } => 3,
            CliError::CheckFailed(_) => 4,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
