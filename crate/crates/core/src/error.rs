use thiserror::Error;

/// Errors raised by the grid, solver, oracle and dataset layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid material layout: {0}")]
    InvalidMaterial(String),

    #[error("invalid wave packet: {0}")]
    InvalidPacket(String),

    #[error("invalid solver config: {0}")]
    InvalidConfig(String),

    #[error("non-finite field value at step {step}, cell {cell}")]
    NonFinite { step: usize, cell: usize },

    #[error("sample {id}: {source}")]
    Sample {
        id: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("dataset format: {0}")]
    Format(String),

    #[error("dataset shape mismatch: expected {expected} bytes, found {found}")]
    ShapeMismatch { expected: u64, found: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
