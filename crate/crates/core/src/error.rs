use std::path::PathBuf;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("feedback model constraint violated: {}", join(.0))]
    Constraint(Vec<Violation>),

    #[error("{what} index {index} out of range (must be < {bound})")]
    OutOfBounds {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("selection required: no action has been selected yet")]
    SelectionRequired,

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("trainer generation failed: {0}")]
    Generation(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", .path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Human-readable violation list, when the error carries one.
    pub fn violations(&self) -> Option<Vec<String>> {
        match self {
            Error::Constraint(v) => Some(v.iter().map(ToString::to_string).collect()),
            Error::InvalidConfig(v) => Some(v.clone()),
            _ => None,
        }
    }
}

fn join(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}
