use thiserror::Error;

/// Errors produced by the engine, the model loader and the tuner.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("layer state missing or uninitialized: {0}")]
    MissingState(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("file format error: {0}")]
    Format(String),

    #[error("tuning error: {0}")]
    Tuning(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("manifest parse error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EngineError>;
