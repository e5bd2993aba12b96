use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator, the learners and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("distance {distance} m is below the reference distance {reference} m")]
    BelowReferenceDistance { distance: f64, reference: f64 },

    #[error("frequency is zero but {work} units of work are pending")]
    InfeasibleFrequency { work: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("soft-update coefficient {0} outside [0, 1]")]
    SoftUpdateCoefficient(f64),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("misaligned joint batch: {0}")]
    MisalignedBatch(String),

    #[error("loss bound undefined: contraction root {root} (radicand {radicand})")]
    BoundUndefined { radicand: f64, root: f64 },

    #[error("degenerate domain [{lo}, {hi}]")]
    DegenerateDomain { lo: f64, hi: f64 },

    #[error("shape mismatch within a parameter class")]
    ShapeMismatch,

    #[error("training diverged at iteration {iteration}; checkpoint written to {}", .checkpoint.display())]
    Diverged { iteration: u64, checkpoint: PathBuf },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
