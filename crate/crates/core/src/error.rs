use thiserror::Error;

use crate::trainer::EpochLog;

pub type Result<T, E = PsaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PsaError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid thresholds: delta_id ({delta_id}) < delta_ood ({delta_ood})")]
    InvertedThresholds { delta_id: f64, delta_ood: f64 },

    /// Training diverged: a step produced a non-finite loss or gradient
    /// (`step` is `Some`), or the model emitted non-finite outputs while
    /// scoring the pool or the test sets (`step` is `None`). The logs of
    /// every completed epoch are preserved.
    #[error("non-finite loss at epoch {epoch}, {}: {what}", step_label(*.step))]
    NonFiniteLoss {
        epoch: usize,
        step: Option<usize>,
        what: String,
        logs: Vec<EpochLog>,
    },

    #[error("could not place {count} centers with separation {separation} in dimension {dim}")]
    CenterPlacement {
        count: usize,
        separation: f64,
        dim: usize,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn step_label(step: Option<usize>) -> String {
    match step {
        Some(s) => format!("step {s}"),
        None => "scoring pass".into(),
    }
}

impl PsaError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        PsaError::InvalidArgument(msg.into())
    }
}
