use thiserror::Error;

use crate::expr::{EvalError, ParseError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid control specification: {0}")]
    InvalidSpec(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("time step {dt:e} exceeds the monotonicity bound {bound:e}")]
    UnstableStep { dt: f64, bound: f64 },
    #[error("non-finite value at time index {time_index}, node {node}")]
    NonFinite { time_index: usize, node: usize },
    #[error("negative variance {value:e} at x={x}{}", time_suffix(*t))]
    /// `t` is NaN when the failure is not tied to a simulation time.
    NegativeVariance { value: f64, x: f64, t: f64 },
    #[error("path {path} left the finite range at step {step}")]
    PathDiverged { path: usize, step: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("hypothesis not declared: {0}")]
    HypothesisViolated(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

fn time_suffix(t: f64) -> String {
    if t.is_finite() {
        format!(", t={t}")
    } else {
        String::new()
    }
}

impl Error {
    /// Stable machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse(ParseError::Syntax { .. }) => "SyntaxError",
            Error::Parse(ParseError::UnknownIdentifier { .. }) => "UnknownIdentifier",
            Error::Eval(_) => "EvalError",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::UnstableStep { .. } => "UnstableStep",
            Error::NonFinite { .. } => "NonFinite",
            Error::NegativeVariance { .. } => "NegativeVariance",
            Error::PathDiverged { .. } => "NonFinite",
            Error::GridMismatch(_) => "GridMismatch",
            Error::Precondition(_) => "PreconditionError",
            Error::HypothesisViolated(_) => "HypothesisViolated",
            Error::InvalidPolicy(_) => "InvalidPolicy",
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Eval(_)
                | Error::UnstableStep { .. }
                | Error::NonFinite { .. }
                | Error::NegativeVariance { .. }
                | Error::PathDiverged { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
