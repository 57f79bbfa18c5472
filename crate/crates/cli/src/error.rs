use std::path::Path;
use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing input: {}", .0.join(", "))]
    Missing(Vec<String>),
    #[error("{stage} failed: {message}")]
    Runtime { stage: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 3,
            CliError::Missing(_) => 4,
            CliError::Runtime { .. } => 5,
        })
    }

    pub fn runtime(stage: &'static str) -> impl FnOnce(String) -> CliError {
        move |message| CliError::Runtime { stage, message }
    }

    pub fn missing(path: &Path) -> CliError {
        CliError::Missing(vec![path.display().to_string()])
    }
}

/// Fails with [`CliError::Missing`] unless `path` exists.
pub fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(path))
    }
}
