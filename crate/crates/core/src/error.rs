use thiserror::Error;

/// Errors raised by the slot engine, the CKKS backend and the layers built on them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("packing error: {0}")]
    Packing(String),
    #[error("key mismatch: ciphertext was not produced under this key set")]
    KeyMismatch,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("scale mismatch: {0} vs {1}")]
    Scale(f64, f64),
    #[error("multiplicative depth exhausted: {0}")]
    DepthExhausted(String),
    #[error("no rotation key for amount {0}")]
    MissingKey(usize),
    #[error("invalid DFT plan: {0}")]
    Plan(String),
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("invalid model: {0}")]
    Model(String),
    #[error("input format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
