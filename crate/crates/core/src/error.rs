use thiserror::Error;

use crate::model::ConfigViolation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid configuration: {}", format_violations(.0))]
    InvalidConfig(Vec<ConfigViolation>),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("channel has a null response on used bin {bin}")]
    ChannelNull { bin: usize },

    #[error("enumeration of {count} combinations exceeds the limit of {limit}")]
    TooManyCombinations { count: u128, limit: u128 },

    #[error("target BER {target:e} is outside the range of the supplied curve")]
    TargetOutOfRange { target: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

fn format_violations(v: &[ConfigViolation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
