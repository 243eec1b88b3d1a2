use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{file}: at `{key}`: {message}")]
    Config { file: String, key: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("output directory {} is not empty (use --force to overwrite)", .0.display())]
    OutputNotEmpty(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] datesort_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// 1 for problems with the configuration or arguments, 2 for failures
    /// while running a stage.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Invalid(_) | CliError::OutputNotEmpty(_) => 1,
            _ => 2,
        }
    }
}
