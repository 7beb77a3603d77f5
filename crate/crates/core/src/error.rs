use thiserror::Error;

/// Errors surfaced by the core library.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("search budget exhausted: {0}")]
    Indeterminate(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parsable class name, used by the CLI error protocol.
    pub fn class(&self) -> &'static str {
        match self {
            CoreError::Parse { .. } => "parse-error",
            CoreError::Validation(_) => "validation-error",
            CoreError::Size(_) => "size-error",
            CoreError::Sampling(_) => "sampling-error",
            CoreError::Generation(_) => "generation-error",
            CoreError::Indeterminate(_) => "budget-error",
            CoreError::Config(_) => "config-error",
            CoreError::Diverged(_) => "diverged-error",
            CoreError::Checkpoint(_) => "checkpoint-error",
            CoreError::Io { .. } => "io-error",
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
