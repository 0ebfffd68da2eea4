use std::path::PathBuf;

use vsr_tensor::TensorError;

pub type Result<T, E = VsrError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum VsrError {
    /// Invalid configuration value or combination.
    #[error("configuration error: {0}")]
    Config(String),
    /// Incompatible spatial dimensions.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Violated operation precondition (lengths, indices, ranges).
    #[error("contract error: {0}")]
    Contract(String),
    /// Filesystem or format failure.
    #[error("I/O error at {path}: {message}")]
    Io { path: PathBuf, message: String },
    /// A training loss went non-finite.
    #[error("training error at step {step}: loss term `{term}` is not finite")]
    NonFinite { term: String, step: u64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl VsrError {
    pub fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        VsrError::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }

    /// Stable short label used in machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            VsrError::Config(_) => "config",
            VsrError::Dimension(_) => "dimension",
            VsrError::Contract(_) => "contract",
            VsrError::Io { .. } => "io",
            VsrError::NonFinite { .. } => "training",
            VsrError::Tensor(_) => "tensor",
        }
    }

    /// True for errors caused by bad inputs or settings rather than runtime failure.
    pub fn is_usage_error(&self) -> bool {
        matches!(
            self,
            VsrError::Config(_) | VsrError::Dimension(_) | VsrError::Contract(_)
        )
    }
}
