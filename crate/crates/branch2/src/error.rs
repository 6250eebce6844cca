use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported test function: {0}")]
    UnsupportedTestFunction(String),
    #[error("state too large: {0}")]
    Resource(String),
    #[error("simulation aborted: total rate became non-finite at t={time} (cells={cells})")]
    RateOverflow { time: f64, cells: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
