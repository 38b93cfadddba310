use std::io;

use thiserror::Error;

/// Errors produced by the control stack, learners, and harness plumbing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("no stance foot: dynamics need at least one supporting foot")]
    NoStance,

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("QP infeasible: {0}")]
    Infeasible(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("stale tape: recorded for parameter version {tape}, network is at {params}")]
    StaleTape { tape: u64, params: u64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("config: {0}")]
    Config(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} contains NaN or Inf")))
    }
}

pub(crate) fn ensure_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { context, expected, got })
    }
}
