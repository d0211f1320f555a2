use thiserror::Error;

pub type Result<T> = std::result::Result<T, GtpError>;

/// Errors produced by the engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GtpError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("strategy error: {0}")]
    Strategy(String),

    #[error("weight schema error: {0}")]
    Schema(String),

    #[error("weight file format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("i/o error: {0}")]
    Io(String),
}

impl GtpError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        GtpError::Shape { op, detail: detail.into() }
    }
}

impl From<std::io::Error> for GtpError {
    fn from(err: std::io::Error) -> Self {
        GtpError::Io(err.to_string())
    }
}
