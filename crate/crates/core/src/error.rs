use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Argument outside the domain of a function, e.g. a mean outside `[1, 2^n]`.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("population count overflow at generation {generation}")]
    Overflow { generation: u32 },

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("line {line}: {kind}")]
    Parse { line: u64, kind: ParseErrorKind },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What went wrong while reading a Ct dataset.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("bad header, expected `concentration,replicate,ct`, found `{0}`")]
    BadHeader(String),
    #[error("missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("malformed number `{value}` in column `{column}`")]
    MalformedNumber { column: &'static str, value: String },
    #[error("value out of range in column `{column}`: {reason}")]
    OutOfRange { column: &'static str, reason: String },
    #[error("duplicate observation for concentration {concentration}, replicate {replicate}")]
    DuplicateKey { concentration: f64, replicate: u32 },
    #[error("{0}")]
    Csv(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
