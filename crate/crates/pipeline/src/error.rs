use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] moe_core::Error),

    #[error(transparent)]
    Neural(#[from] moe_neural::Error),

    #[error("config line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },

    #[error("setting {key}: {message}")]
    Setting { key: String, message: String },

    /// The predicted path count needs more stored blocks than were given.
    #[error("insufficient blocks: {required} required, {available} available")]
    InsufficientBlocks { required: usize, available: usize },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Short stable identifier for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(e) => e.kind(),
            Error::Neural(e) => e.kind(),
            Error::ConfigSyntax { .. } => "config-syntax",
            Error::Setting { .. } => "setting",
            Error::InsufficientBlocks { .. } => "insufficient-blocks",
            Error::Usage(_) => "usage",
            Error::Csv(_) => "csv",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn setting(key: &str, message: impl Into<String>) -> Self {
        Error::Setting {
            key: key.to_string(),
            message: message.into(),
        }
    }
}
