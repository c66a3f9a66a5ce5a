use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("input contains no events")]
    EmptyInput,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown user `{0}`")]
    UnknownUser(String),

    #[error("unknown ROI `{0}`")]
    UnknownRoi(String),

    #[error("group is empty")]
    EmptyGroup,

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("removing user `{0}` would make a count negative")]
    NegativeCount(String),

    #[error("user pool too small: need {needed} users besides the target, have {available}")]
    PoolTooSmall { needed: usize, available: usize },

    #[error("both classes must be present")]
    SingleClass,

    #[error("at least {needed} samples required, got {found}")]
    TooFewSamples { needed: usize, found: usize },

    #[error("no time slot could be evaluated")]
    NoEvaluableSlots,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
