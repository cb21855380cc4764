use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed record syntax. `offset` is the byte offset within the line.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("schema error in `{field}`: {rule}")]
    Schema { field: String, rule: String },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("unknown sample id `{0}`")]
    UnknownId(String),

    /// Selection could not reach the budget with the enabled backfill stages.
    #[error("insufficient eligible samples: selected {achieved} of {required}")]
    InsufficientEligible { achieved: usize, required: usize },
}

impl Error {
    pub(crate) fn schema(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
