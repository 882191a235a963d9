use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: String },

    #[error("tuple {0:?} is not in the label space")]
    NotInLabelSpace((u8, u8, u8)),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient blocks: {required} required, {available} available")]
    InsufficientBlocks { required: usize, available: usize },

    #[error("model order {order} too large for {elements} elements")]
    ModelOrderTooLarge { order: usize, elements: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("label mismatch: {0}")]
    LabelMismatch(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGeometry(_) => "invalid-geometry",
            Error::EmptyInput(_) => "empty-input",
            Error::OutOfRange { .. } => "out-of-range",
            Error::NotInLabelSpace(_) => "not-in-label-space",
            Error::InvalidInput(_) => "invalid-input",
            Error::InsufficientBlocks { .. } => "insufficient-blocks",
            Error::ModelOrderTooLarge { .. } => "model-order-too-large",
            Error::DegenerateInput(_) => "degenerate-input",
            Error::LabelMismatch(_) => "label-mismatch",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }
}
