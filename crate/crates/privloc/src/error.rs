use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({0}, {1}) is outside the map bounds")]
    OutOfBounds(u64, u64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("movement length {got} exceeds maximum {max}")]
    DistanceViolation { got: f64, max: u64 },
    #[error("no tiling fits the movement (precondition violated)")]
    NoServerFits,
    #[error("unknown id: {0}")]
    NotFound(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
