use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing prerequisite {}: {hint}", path.display())]
    Missing { path: PathBuf, hint: String },
    #[error("numerical divergence: {0}")]
    Divergence(String),
    #[error(transparent)]
    Core(emgpose::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing { .. } => 3,
            CliError::Divergence(_) => 4,
            _ => 1,
        }
    }

    pub(crate) fn missing(path: impl Into<PathBuf>, hint: impl Into<String>) -> Self {
        CliError::Missing { path: path.into(), hint: hint.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl From<emgpose::Error> for CliError {
    fn from(e: emgpose::Error) -> Self {
        match e {
            emgpose::Error::Config(m) => CliError::Config(m),
            e @ emgpose::Error::Divergence { .. } => CliError::Divergence(e.to_string()),
            e => CliError::Core(e),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
