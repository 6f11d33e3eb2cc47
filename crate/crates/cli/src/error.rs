//! CLI-level failures: configuration problems, missing plot series, I/O.
//! Numeric failures from the core library pass through with their own
//! context; `main` maps everything onto the exit-code contract.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The configuration file is structurally fine but semantically unusable
    /// for the requested method (missing fields, empty suites, bad values).
    #[error("config error: {what}")]
    Config { what: String },

    /// A plot kind asked for a series the report does not contain.
    #[error("report has no {kind} series; re-run with {hint}")]
    MissingSeries { kind: String, hint: String },

    /// JSON that does not parse or does not match the expected shape.
    #[error("invalid JSON in {path}: {detail}")]
    Json { path: String, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] entrobound_core::Error),
}

impl Error {
    pub fn config(what: impl Into<String>) -> Error {
        Error::Config { what: what.into() }
    }

    pub fn missing_series(kind: impl Into<String>, hint: impl Into<String>) -> Error {
        Error::MissingSeries {
            kind: kind.into(),
            hint: hint.into(),
        }
    }

    pub fn json(path: impl Into<String>, detail: impl std::fmt::Display) -> Error {
        Error::Json {
            path: path.into(),
            detail: detail.to_string(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
