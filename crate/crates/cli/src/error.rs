use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Where in a file parsing failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Byte(u64),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(l) => write!(f, "line {l}"),
            Location::Byte(b) => write!(f, "byte offset {b}"),
        }
    }
}

#[derive(Debug, Error)]
#[error("{}: {location}: {message}", path.display())]
pub struct ParseError {
    pub path: PathBuf,
    pub location: Location,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Domain(#[from] grasptransfer_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{}: {message}", path.display())]
    Schema { path: PathBuf, message: String },
}

impl CliError {
    /// 1 for domain failures, 2 for I/O and parse failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Io { .. } | CliError::Parse(_) | CliError::Schema { .. } => 2,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn parse(path: &Path, location: Location, message: impl Into<String>) -> Self {
        CliError::Parse(ParseError { path: path.to_path_buf(), location, message: message.into() })
    }

    pub fn schema(path: &Path, message: impl fmt::Display) -> Self {
        CliError::Schema { path: path.to_path_buf(), message: message.to_string() }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        CliError::Domain(grasptransfer_core::Error::InvalidParameter(message.into()))
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
