//! Error type shared by the core modules.

use alloc::string::String;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A numeric input was non-finite or outside its documented domain.
    InvalidInput(&'static str),
    /// Text input could not be parsed; `line` is 1-based.
    Parse { line: usize, message: String },
    /// A face referenced a vertex that does not exist; `line` is 1-based.
    /// `index` keeps the literal (possibly non-positive) value from the file.
    IndexOutOfRange {
        line: usize,
        index: i64,
        vertex_count: usize,
    },
    /// The mesh has no positive-area triangles.
    DegenerateMesh,
    /// A fixed viewpoint sees an empty silhouette, so supervision is undefined.
    DegenerateSetup(String),
    /// A caller broke an API contract (shape mismatch, stale records, empty input).
    Contract(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(what) => write!(f, "invalid input: {what}"),
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::IndexOutOfRange {
                line,
                index,
                vertex_count,
            } => write!(
                f,
                "face index {index} out of range at line {line} (mesh has {vertex_count} vertices)"
            ),
            Error::DegenerateMesh => write!(f, "mesh has zero total surface area"),
            Error::DegenerateSetup(msg) => write!(f, "degenerate setup: {msg}"),
            Error::Contract(what) => write!(f, "contract violation: {what}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
