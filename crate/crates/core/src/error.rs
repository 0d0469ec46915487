use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sequence")]
    EmptySequence,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-deterministic loss function: two evaluations differed ({0} vs {1})")]
    NonDeterministicLoss(f64, f64),

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
