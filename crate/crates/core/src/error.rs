//! Error type shared across the crate.

use thiserror::Error;

/// Alias for results produced by this crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by grid construction, estimation, and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A time value fell outside the grid domain.
    #[error("{quantity} = {value} outside domain ({lo}, {hi}]")]
    Domain {
        quantity: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// A matrix or vector had an incompatible size.
    #[error("size error: {what} (expected {expected}, got {got})")]
    Size {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// An argument violated a precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A record could not be placed on the grid; carries the record index.
    #[error("record {index}: {source}")]
    Record {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    /// Scale identification failed because a left singular vector has
    /// (numerically) zero mean.
    #[error("identification failed for layer {layer}: left singular vector has zero mean")]
    Identification { layer: usize },

    /// A diagnostic needs at least one observed cell.
    #[error("all cells are missing")]
    AllMissing,

    /// A configuration value is inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Numerical evaluation of a queue integral diverged.
    #[error("unstable queue evaluation: {0}")]
    Instability(String),

    /// A simulation produced too little data to form the requested estimate.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

impl Error {
    pub(crate) fn at_record(self, index: usize) -> Error {
        Error::Record {
            index,
            source: Box::new(self),
        }
    }
}
