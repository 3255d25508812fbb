use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An input fell outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },

    #[error("non-finite derivative encountered at t = {time} s")]
    Propagation { time: f64 },

    #[error("noise calibration failed for marker {marker}: only {samples} sample(s) survived")]
    Calibration { marker: usize, samples: usize },

    #[error("covariance is not positive definite even after {jitter:e} diagonal jitter")]
    CovarianceDegenerate { jitter: f64 },

    #[error("invalid filter parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("unknown marker id {0}")]
    UnknownMarker(usize),

    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("failed to parse {what} at line {line}: {reason}")]
    Parse {
        what: &'static str,
        line: usize,
        reason: String,
    },

    #[error("run {run} failed at t = {time} s: {source}")]
    Run {
        run: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
