use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("matrix is singular or ill-conditioned (condition estimate {condition:.3e})")]
    Singular { condition: f64 },
    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },
    #[error("non-finite loss at {stage} step {step}: {detail}")]
    NonFiniteLoss {
        stage: &'static str,
        step: usize,
        detail: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("insufficient contact: {points} points inside the fingertip window (need at least {required})")]
    InsufficientContact { points: usize, required: usize },
    #[error("force limit exceeded: {force:.4} N > {limit:.4} N")]
    ForceLimit { force: f64, limit: f64 },
    #[error("optimal aperture not bracketed: target {target:.4} N, reachable [{low:.4}, {high:.4}] N")]
    NotBracketed { target: f64, low: f64, high: f64 },
    #[error("unstabilizable estimate: {0}")]
    Unstabilizable(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes in {0}")]
    BadMagic(String),
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checksum mismatch in record {index}")]
    Checksum { index: usize },
    #[error("truncated data: {0}")]
    Truncated(String),
    #[error("invalid record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact {path}: run `{stage}` first")]
    MissingArtifact { path: PathBuf, stage: &'static str },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::MissingArtifact { .. } => 3,
            Error::Singular { .. }
            | Error::NonFiniteGradient { .. }
            | Error::NonFiniteLoss { .. }
            | Error::Unstabilizable(_)
            | Error::NotBracketed { .. } => 4,
            _ => 1,
        }
    }
}
