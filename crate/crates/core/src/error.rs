use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("power iteration did not converge after {iterations} iterations (last estimate {estimate})")]
    Convergence { iterations: usize, estimate: f64 },

    #[error("orthogonal pre-training of {target} did not converge: loss {final_loss:e} after {steps} steps")]
    PretrainFailed {
        target: String,
        steps: usize,
        final_loss: f64,
    },

    #[error("bad IDX data: {0}")]
    Format(String),

    #[error("truncated IDX payload: header declares {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("invalid value: {0}")]
    Value(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
