use std::fmt;

use gtp_core::GtpError;

/// Process exit codes.
pub mod exit {
    pub const CRITERIA_FAILED: u8 = 1;
    pub const INVALID_SPEC: u8 = 2;
    pub const IO: u8 = 3;
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn spec(message: impl Into<String>) -> Self {
        Self { code: exit::INVALID_SPEC, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { code: exit::IO, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<GtpError> for CliError {
    fn from(e: GtpError) -> Self {
        match e {
            GtpError::Io(_) => Self::io(e.to_string()),
            _ => Self::spec(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
