use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}:{column}: {message}")]
    Json { path: PathBuf, line: usize, column: usize, message: String },

    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),

    #[error("invalid scene: {0}")]
    Scene(String),

    #[error("{0}")]
    Core(#[from] nearfield::Error),

    #[error("cannot write output: {0}")]
    Output(String),
}

impl CliError {
    /// 1 for anything wrong with the input, 2 when a computation fails to
    /// converge.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(nearfield::Error::NoConvergence { .. }) => 2,
            _ => 1,
        }
    }
}
