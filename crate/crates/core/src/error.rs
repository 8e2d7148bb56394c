//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by parsing, replay, statistics and linear algebra.
#[derive(Debug, Error)]
pub enum Error {
    /// A record in an event file could not be decoded.
    #[error("parse error at {position}: {message}")]
    Parse { position: Position, message: String },

    /// Input timestamps run backwards where non-decreasing order is required.
    #[error("ordering error: timestamp {found} after {previous} ({context})")]
    Ordering {
        previous: i64,
        found: i64,
        context: String,
    },

    /// The event stream references order state that does not exist or
    /// would leave the book inconsistent.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A series is constant (zero standard deviation) or otherwise too
    /// degenerate for the requested statistic.
    #[error("degenerate series: {0}")]
    Degenerate(String),

    /// Two inputs that must agree in shape or kind do not.
    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    /// Aligned sequences have different lengths.
    #[error("alignment error: left has {left} elements, right has {right}")]
    Alignment { left: usize, right: usize },

    /// A numeric argument is outside the function's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative algorithm failed to reach its tolerance.
    #[error("did not converge: {0}")]
    NonConvergence(String),

    /// A computation produced no usable entries at all.
    #[error("empty result: {0}")]
    EmptyResult(String),

    /// A generator target cannot be met under the configured constraints.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// Configuration value rejected.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Location of a malformed record: line number for text input, byte
/// offset for binary input. Both are 1-based/0-based respectively.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Line(usize),
    Offset(u64),
}

impl std::fmt::Display for Position {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Position::Line(n) => write!(f, "line {n}"),
            Position::Offset(o) => write!(f, "byte offset {o}"),
        }
    }
}

impl Error {
    pub fn parse_at_line(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            position: Position::Line(line),
            message: message.into(),
        }
    }

    pub fn parse_at_offset(offset: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            position: Position::Offset(offset),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
