use std::io;

use crate::container::ContainerError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Container {
        path: String,
        #[source]
        source: ContainerError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("solver error: {0}")]
    Solver(#[from] lrcs::Error),
}

impl CliError {
    /// Process exit status: 2 configuration, 3 data, 4 solver.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Container { .. } | CliError::Io { .. } => 3,
            CliError::Solver(_) => 4,
        }
    }

    pub fn container(path: &std::path::Path, source: ContainerError) -> Self {
        CliError::Container {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn io(path: &std::path::Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
