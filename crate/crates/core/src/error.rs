use thiserror::Error;

use crate::reflect::LevelRecord;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Hard violation of a structural requirement (sign of beta, horizon, dimensions, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("quadrature needs at least {min} nodes, got {got}")]
    Quadrature { got: usize, min: usize },

    #[error("forward simulation failed: {0}")]
    Simulation(String),

    #[error("empty particle cloud")]
    EmptyCloud,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("regression system is numerically singular (condition estimate {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("non-finite value produced at step {step}")]
    NonFinite { step: usize },

    #[error("schedule exhausted after {} level(s) without meeting the tolerances", trace.len())]
    NotConverged { trace: Vec<LevelRecord> },

    #[error("constraint infeasible: terminal mean {mean} is below obstacle {obstacle}")]
    ConstraintInfeasible { mean: f64, obstacle: f64 },

    #[error("oracle refinement changed the result by {gap:.3e} (limit {limit:.1e})")]
    NoSelfConvergence { gap: f64, limit: f64 },

    #[error("non-positive errors at levels {levels:?}; converged below noise floor")]
    NonPositiveError { levels: Vec<usize> },
}
