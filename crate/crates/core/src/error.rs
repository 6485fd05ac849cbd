use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report.
///
/// Each variant maps to a distinct process exit code (see [`Error::exit_code`]),
/// which the command-line runner returns verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error(
        "memory capacity full in layer {layer}: growth needs {needed} empty slots but only {available} remain"
    )]
    Capacity {
        layer: usize,
        needed: usize,
        available: usize,
    },

    #[error("cannot ingest {}: {reason} (byte offset {offset})", path.display())]
    Ingestion {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("checkpoint version {found} is not supported (this build reads version {expected})")]
    Version { found: u32, expected: u32 },

    #[error("task {task} aborted: {reason}")]
    TaskAborted { task: usize, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 3,
            Error::Ingestion { .. } | Error::Unsupported(_) => 4,
            Error::Capacity { .. } => 5,
            Error::Integrity(_) => 6,
            Error::Version { .. } => 7,
            Error::TaskAborted { .. } => 8,
            Error::Io(_) => 9,
            Error::Json(_) => 10,
            Error::Input(_) => 11,
            Error::Shape(_) | Error::Numeric(_) | Error::State(_) => 12,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
