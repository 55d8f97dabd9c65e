//! Error classification for the command-line surface. Every failure falls
//! into one of three exit-code classes: parse (2), contract (3), I/O (4).

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Malformed text or binary input, including config files. Exit code 2.
    Parse(String),
    /// Structurally valid input with out-of-domain values. Exit code 3.
    Contract(String),
    /// The operating system refused a read or write. Exit code 4.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Contract(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Parse(msg) => write!(f, "parse error: {msg}"),
            CliError::Contract(msg) => write!(f, "invalid input: {msg}"),
            CliError::Io(msg) => write!(f, "i/o error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<pointfit_core::Error> for CliError {
    fn from(e: pointfit_core::Error) -> Self {
        use pointfit_core::Error as E;
        match e {
            E::Parse { .. } | E::IndexOutOfRange { .. } => CliError::Parse(e.to_string()),
            E::InvalidInput(_) | E::DegenerateMesh | E::DegenerateSetup(_) | E::Contract(_) => {
                CliError::Contract(e.to_string())
            }
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Wraps an I/O failure with the path it happened on.
pub fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}
