use thiserror::Error;

/// Errors raised by instance handling and the allocation solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimensions(String),

    #[error("dimension mismatch: expected {expected}, found {found} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid value for `{field}`: {reason}")]
    InvalidField { field: String, reason: String },

    #[error("malformed file at line {line}, column {column}: {message}")]
    Malformed {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("power budget must be positive and finite, got {0}")]
    NonPositiveBudget(f64),

    #[error("user {user} requires rate {rate} but has no carrier with positive gain")]
    UnreachableUser { user: usize, rate: f64 },

    #[error("rate {rate} requested for user {user} on carrier {carrier} whose gain is zero")]
    ZeroGainRate {
        user: usize,
        carrier: usize,
        rate: f64,
    },

    #[error("rate requirements infeasible: minimum sum power {p_min} exceeds budget {budget}")]
    Infeasible { p_min: f64, budget: f64 },

    #[error(
        "could not raise the weight of user {user} far enough: target rate {target}, single-user ceiling {single_user_rate}"
    )]
    Bracket {
        user: usize,
        target: f64,
        single_user_rate: f64,
    },

    #[error("allocation is not exclusive: carrier {carrier} has more than one transmitting user")]
    NotExclusive { carrier: usize },

    #[error("grid search with {dims} dimensions exceeds the budget of {max}")]
    GridTooLarge { dims: usize, max: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidField {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn from_json(err: serde_json::Error) -> Self {
        Error::Malformed {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
