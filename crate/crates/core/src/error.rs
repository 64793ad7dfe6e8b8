use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("degenerate radiance: no valid pixel with positive intensity")]
    DegenerateRadiance,

    #[error("degenerate prediction: {0}")]
    DegeneratePrediction(&'static str),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate annotation set: {0}")]
    DegenerateAnnotation(&'static str),

    #[error("zero total judgment weight")]
    ZeroWeight,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("malformed PFM: {0}")]
    Pfm(String),

    #[error("PNG error: {0}")]
    Png(String),

    #[error("annotation file: {0}")]
    Annotation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
