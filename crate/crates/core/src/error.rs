use thiserror::Error;

use crate::device::Violation;
use crate::driver::CompileTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cutoff must be at least {min}, got {got}")]
    Cutoff { min: usize, got: usize },

    #[error("pair count must be positive")]
    PairCount,

    #[error("cutoff mismatch: {0} vs {1}")]
    CutoffMismatch(usize, usize),

    #[error("mode {mode} out of range for a {num_modes}-mode system")]
    ModeOutOfRange { mode: usize, num_modes: usize },

    #[error("mode {0} listed more than once")]
    DuplicateMode(usize),

    #[error("occupation {occupation} on mode {mode} is not below cutoff {cutoff}")]
    Occupation { mode: usize, occupation: usize, cutoff: usize },

    #[error("thermal loss is not unitary; apply it to a mixed state")]
    NonUnitary,

    #[error("{name} = {value} is out of range")]
    Parameter { name: &'static str, value: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("amplitude vector has squared norm {0} > 1")]
    Norm(f64),

    #[error("tables were sampled with different shot counts ({0} vs {1})")]
    ShotMismatch(u64, u64),

    #[error("insufficient shots: the denominator count is zero")]
    InsufficientShots,

    #[error("the cost denominator vanishes")]
    ZeroDenominator,

    #[error("gradient request has no marked gate positions")]
    NoMarkedPositions,

    #[error("gate position {0} does not carry a beamsplitter phase")]
    NotPhaseGate(usize),

    #[error("job is invalid: {}", format_violations(.0))]
    InvalidJob(Vec<Violation>),

    #[error("truncation leak {leak:.3e} exceeds {limit}")]
    TruncationLeak { leak: f64, limit: f64 },

    #[error("simulation too large: {0}")]
    TooLarge(String),

    #[error("optimizer left [-pi, pi] at step {}", .0.steps.len())]
    Diverged(Box<CompileTrace>),

    #[error("malformed data: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}
