//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ElasError {
    /// A caller violated an operation's shape contract.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// A matrix handed to the packed-format routines does not satisfy the
    /// 2:4 pattern. Reports the first offending location.
    #[error("2:4 pattern violation at row {row}, group {group}: {nonzeros} nonzeros")]
    PatternViolation {
        row: usize,
        group: usize,
        nonzeros: usize,
    },

    /// Packed metadata is malformed (duplicate or out-of-order position codes).
    #[error("malformed packed metadata at row {row}, group {group}")]
    MalformedMeta { row: usize, group: usize },

    #[error("SVD failed to converge after {sweeps} sweeps (off-diagonal {off:.3e})")]
    SvdNonConvergence { sweeps: usize, off: f64 },

    #[error("non-finite value encountered in {op}")]
    NonFinite { op: &'static str },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ElasError>;
