use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Tensor or block shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input is degenerate for the requested operation (e.g. a constant batch).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Model or schedule configuration is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input collection is empty.
    #[error("empty input: {0}")]
    Empty(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, {phase} step {step}: loss = {loss}")]
    Divergence {
        epoch: usize,
        phase: String,
        step: usize,
        loss: f64,
    },

    /// The target BER is not bracketed by the search interval.
    #[error(
        "target BER {target:e} not bracketed: BER({lo_db} dB) = {lo_ber:e}, BER({hi_db} dB) = {hi_ber:e}"
    )]
    NotBracketed {
        target: f64,
        lo_db: f64,
        lo_ber: f64,
        hi_db: f64,
        hi_ber: f64,
    },

    /// Two checkpoints cannot be combined.
    #[error("incompatible checkpoints: {0}")]
    Incompatible(String),

    /// A checkpoint file is truncated, corrupted or of an unknown version.
    #[error("checkpoint integrity error in {path}: {reason}")]
    Integrity { path: PathBuf, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
