use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid code distance {0}: must be odd and at least 3")]
    InvalidDistance(usize),

    #[error("stabilizer id {id} out of range (lattice has {count} stabilizers)")]
    InvalidId { id: usize, count: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in `{tensor}`")]
    NonFinite { tensor: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported file version {found} (expected {expected})")]
    Version { expected: u8, found: u8 },

    #[error("payload checksum mismatch")]
    Checksum,

    #[error("shape mismatch for tensor `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checkpoint `{path}`: {reason}")]
    Checkpoint { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
