use thiserror::Error;

use crate::capacity::Violation;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid channel parameters p={p}, q={q}: both must lie in (0, 1]")]
    InvalidChannel { p: f64, q: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("subset must be non-empty")]
    EmptySubset,

    #[error("dimension mismatch: expected {expected} clients, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("numerical inconsistency: {0}")]
    NumericalInconsistency(String),

    #[error("at least 2 runs are required, got {0}")]
    InsufficientRuns(usize),

    #[error("no samples supplied")]
    EmptySamples,

    #[error("{n} clients exceeds the enumeration limit of {max}")]
    TooManyClients { n: usize, max: usize },

    #[error("feasible region is empty ({} violated constraints)", violations.len())]
    InfeasibleRegion { violations: Vec<Violation> },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
