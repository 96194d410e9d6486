use std::io;

use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of an operation was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Two tensors or vectors disagree in shape.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A primitive produced a non-finite value.
    #[error("numerical failure in `{primitive}`: {detail}")]
    Numerical {
        primitive: &'static str,
        detail: String,
    },

    /// Cholesky factorization failed even at the largest diagonal shift.
    #[error("cholesky factorization failed at shift {shift:e}")]
    Cholesky { shift: f64 },

    /// Training hit a non-finite loss; the checkpoint holds the last parameters
    /// that produced finite values.
    #[error("training aborted at epoch {epoch}, batch {batch}: {cause}")]
    TrainingAborted {
        epoch: usize,
        batch: usize,
        cause: String,
        last_good: Box<crate::pipeline::Checkpoint>,
    },

    /// Rows of a feature file disagree in dimensionality.
    #[error("row {row}: expected {expected} values, found {found}")]
    RowDimension {
        row: usize,
        expected: usize,
        found: usize,
    },

    /// A class id referenced by a split manifest is not present in the data,
    /// or a record's class is missing from the manifest.
    #[error("unknown class {class}: {detail}")]
    UnknownClass { class: u32, detail: String },

    /// Two records of the same class carry different semantic vectors.
    #[error("class {class}: semantic vector at row {row} differs from earlier rows")]
    SemanticMismatch { class: u32, row: usize },

    /// Malformed text input.
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    /// Wrong magic bytes or structurally invalid binary container.
    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("truncated input: {0}")]
    Truncated(String),

    /// Invalid configuration value or unknown configuration key.
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn dimension(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
