use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid rate {rate} for {what}")]
    InvalidRate { what: &'static str, rate: f64 },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("node {node} has degree zero and no self-loop under a normalized scheme")]
    DegreeZero { node: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("frozen base parameters drifted (expected hash {expected}, found {found})")]
    Integrity { expected: String, found: String },

    #[error("power iteration did not converge after {iterations} iterations (last estimate {estimate})")]
    Convergence { iterations: usize, estimate: f64 },

    #[error("no witness found after {attempts} attempts")]
    SearchExhausted { attempts: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn load(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Load { path: path.into(), reason: reason.into() }
    }
}
