//! Crate-wide error type.
//!
//! Errors are grouped by what the caller can do about them: configuration
//! errors mean the request itself was malformed (bad parameter, degenerate
//! interval, mismatched grids) and map to CLI exit code 2; everything else is
//! a runtime failure (overflow mid-integration, rank-deficient regression,
//! unreadable files) and maps to exit code 1.

use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// The request was malformed: unknown parameter names, invalid ranges,
    /// inconsistent grids, missing required options, and similar.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A numeric computation produced a non-finite intermediate value.
    #[error("numeric overflow in {0}: non-finite intermediate value")]
    Overflow(String),

    /// The operation is well-posed in general but not supported for this
    /// input (for example, the closed-form oscillator solution in the
    /// overdamped regime).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The regression design matrix is numerically rank-deficient; the
    /// message names the dependent feature columns.
    #[error("rank-deficient design matrix; dependent features: {0}")]
    RankDeficient(String),

    /// A feature string or feature list could not be parsed.
    #[error("cannot parse feature {input:?}: {reason}")]
    FeatureParse { input: String, reason: String },

    /// A persisted file (dataset, model, manifest) is malformed or has an
    /// unsupported version.
    #[error("bad file format in {path}: {reason}")]
    FileFormat { path: String, reason: String },

    /// Underlying I/O failure.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Convenience constructor for configuration errors.
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Wraps an I/O error with the path it occurred on.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that indicate a malformed request rather than a
    /// runtime failure; the CLI maps these to exit code 2.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::FeatureParse { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
