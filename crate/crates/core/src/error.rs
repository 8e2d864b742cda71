use std::path::{Path, PathBuf};

use cafnet_autograd::AutogradError;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("missing inputs: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    Missing(Vec<PathBuf>),
    #[error("unreadable inputs: {}", .0.iter().map(|(p, d)| format!("{}: {d}", p.display())).collect::<Vec<_>>().join("; "))]
    Unreadable(Vec<(PathBuf, String)>),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autograd(AutogradError),
}

impl From<AutogradError> for CoreError {
    fn from(e: AutogradError) -> Self {
        match e {
            AutogradError::NonFinite { op } => CoreError::Numeric(format!("non-finite value produced by {op}")),
            AutogradError::Checkpoint(d) => CoreError::Checkpoint(d),
            other => CoreError::Autograd(other),
        }
    }
}

impl CoreError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CoreError::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn format(path: impl AsRef<Path>, detail: impl Into<String>) -> Self {
        CoreError::Format { path: path.as_ref().to_path_buf(), detail: detail.into() }
    }
}

pub(crate) fn invalid<T>(detail: impl Into<String>) -> Result<T> {
    Err(CoreError::Invalid(detail.into()))
}

pub(crate) fn config_err<T>(detail: impl Into<String>) -> Result<T> {
    Err(CoreError::Config(detail.into()))
}
