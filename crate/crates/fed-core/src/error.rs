//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FedError {
    /// Shape mismatch between tensor operands. Carries both shapes so the
    /// message can name them.
    #[error("{op}: dimension mismatch, lhs {lhs:?} vs rhs {rhs:?}")]
    Dim {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Invalid configuration value (divisibility, ranges, unknown keys, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an operation's contract (wrong label range,
    /// non-scalar loss, unknown identity, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Memory bank could not be initialized.
    #[error("initialization error: {0}")]
    Init(String),

    /// Query/gallery split could not be built.
    #[error("split error: {0}")]
    Split(String),

    /// Training-state error (e.g. stepping before bank initialization).
    #[error("state error: {0}")]
    State(String),

    /// Evaluation protocol violation, names the offending identity.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Malformed or mismatched checkpoint data.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FedError>;
