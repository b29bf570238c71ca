//! Error type shared by all modules of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operator or vector dimensions are invalid or inconsistent.
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    /// A scalar parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Vector/operator shapes do not conform for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Input data violates a precondition (non-finite entries, zero data, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The problem is degenerate (e.g. `Aᵀb = 0`, or `‖b‖ ≤ σ` so the noise
    /// constraint admits the trivial solution).
    #[error("degenerate problem: {0}")]
    DegenerateProblem(String),

    /// The discrepancy equation has no root on the searched range.
    #[error("discrepancy unreachable: {0}")]
    DiscrepancyUnreachable(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file could not be parsed (MatrixMarket, metadata, config).
    #[error("parse error: {0}")]
    Parse(String),
}
