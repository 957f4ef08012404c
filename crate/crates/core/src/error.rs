use thiserror::Error;

/// Errors produced by estimation, simulation and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is outside its valid range.
    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    /// The input data violates an invariant (shape, binary entries, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A CSV or distribution file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// The estimand is not identified from the data at hand.
    #[error("identification failure: {message}")]
    Identification {
        message: String,
        /// Columns (or patterns) implicated in the failure.
        involved: Vec<String>,
    },

    /// An importance-weight denominator is numerically zero.
    #[error("weight explosion at row {row}: denominator {denominator:e}")]
    WeightExplosion { row: usize, denominator: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn identification(message: impl Into<String>, involved: Vec<String>) -> Self {
        Error::Identification {
            message: message.into(),
            involved,
        }
    }

    /// True for failures that mean "not identified" rather than bad input.
    pub fn is_identification(&self) -> bool {
        matches!(
            self,
            Error::Identification { .. } | Error::WeightExplosion { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
