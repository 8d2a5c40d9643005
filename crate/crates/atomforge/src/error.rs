//! Error type shared across the crate.
//!
//! Variants are grouped by how the CLI reports them: configuration problems
//! exit with code 2, model/scenario problems with 3, I/O problems with 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("config field {field}: {reason} (got {value})")]
    ConfigField {
        field: &'static str,
        reason: &'static str,
        value: String,
    },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("trap depth {depth_uk} µK is below k_B*T = {temperature_uk} µK; thermal sampling would mostly escape")]
    TrapTooShallow { depth_uk: f64, temperature_uk: f64 },

    #[error("lattice profile has {found} maxima in range, need at least {need}")]
    TooFewMaxima { found: usize, need: usize },

    #[error("fit is non-identifiable: {0}")]
    NonIdentifiable(String),

    #[error("fit did not converge: {0}")]
    FitDiverged(String),

    #[error("model: {0}")]
    Model(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    BadData { path: String, message: String },
}

impl Error {
    /// Process exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ConfigField { .. } => 2,
            Error::Scenario(_)
            | Error::TrapTooShallow { .. }
            | Error::TooFewMaxima { .. }
            | Error::NonIdentifiable(_)
            | Error::FitDiverged(_)
            | Error::Model(_) => 3,
            Error::Io { .. } | Error::BadData { .. } => 4,
        }
    }

    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
