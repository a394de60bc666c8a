use std::path::PathBuf;

use sosched_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 configuration, 3 infeasible instance, 4 numerical inconsistency, 1 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(CoreError::InfeasibleRegion { .. }) => 3,
            CliError::Core(CoreError::NumericalInconsistency(_)) => 4,
            CliError::Core(_) => 2,
            CliError::Io { .. } => 1,
        }
    }
}
