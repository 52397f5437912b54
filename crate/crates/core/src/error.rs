use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("bit position {position} out of range for a {len}-bit index")]
    PositionOutOfRange { position: u32, len: u32 },

    #[error("full subset search over {bits} bits exceeds the configured cap of {cap} bits")]
    SearchTooLarge { bits: u32, cap: u32 },

    #[error("infeasible network: {0}")]
    Infeasible(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
