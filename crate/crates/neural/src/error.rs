use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("backward called before forward in {0}")]
    BackwardBeforeForward(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    #[error("malformed checkpoint: {0}")]
    Format(String),

    #[error(transparent)]
    Label(#[from] moe_core::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::BackwardBeforeForward(_) => "backward-before-forward",
            Error::Config(_) => "config",
            Error::OutOfRange { .. } => "out-of-range",
            Error::EmptyInput(_) => "empty-input",
            Error::TrainingDiverged { .. } => "training-diverged",
            Error::Format(_) => "format",
            Error::Label(e) => e.kind(),
            Error::Io(_) => "io",
        }
    }
}
