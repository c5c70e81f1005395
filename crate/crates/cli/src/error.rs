use std::io;
use std::path::Path;

use grouplm_core::Error as CoreError;

/// Failure of a subcommand, with the process exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or an invalid configuration (exit 2).
    #[error("{0}")]
    Usage(String),
    /// Inputs that do not fit together (exit 3).
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Io { .. } => 4,
            CliError::Core(e) => match e {
                CoreError::Config(_)
                | CoreError::Spec(_)
                | CoreError::Split(_)
                | CoreError::RankTooLarge { .. } => 2,
                CoreError::InvalidUserId
                | CoreError::Parse { .. }
                | CoreError::DegenerateGroup { .. }
                | CoreError::KeyMismatch { .. }
                | CoreError::Vocab { .. }
                | CoreError::MissingEmbedding(_)
                | CoreError::Shape(_) => 3,
                CoreError::EmptyBatch | CoreError::TrainingDiverged { .. } => 4,
            },
        }
    }
}
