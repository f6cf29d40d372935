use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("action {action} out of range for action space of size {size}")]
    InvalidAction { action: usize, size: usize },

    #[error("illegal action {0}: cell already occupied")]
    OccupiedCell(usize),

    #[error("environment is in a terminal state")]
    Terminal,

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("non-finite {what} at training step {step}")]
    NonFinite { what: String, step: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed csv {path} at row {row}: {msg}")]
    Csv {
        path: String,
        row: usize,
        msg: String,
    },

    #[error("{count} run(s) failed: {detail}")]
    RunFailed { count: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
