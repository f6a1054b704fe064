//! Particle solver for mean-reflected McKean-Vlasov backward stochastic
//! differential equations with a generalized `dκ` term.
//!
//! The equation is solved by smoothing the obstacle (`mollify`), penalizing
//! the mean constraint at a deterministic level (`penalized`), and driving the
//! penalty and smoothing levels upward (`reflect`). Deterministic mean-closed
//! reference solvers live in `oracle`; rate fits and stability experiments in
//! `diagnostics`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod mollify;
pub mod oracle;
pub mod paths;
pub mod penalized;
pub mod problem;
pub mod reflect;
pub mod table;

pub use error::{Error, Result};
pub use mollify::{mollify_obstacle, SmoothObstacle};
pub use paths::{simulate_forward, ForwardCloud, MomentVector, TimeGrid};
pub use penalized::{solve_penalized, BasisKind, PenalizedSolution, RegressionBasis};
pub use problem::{validate_problem, ProblemSpec, ValidationReport};
pub use reflect::{solve_reflected, ConvergenceSchedule, ReflectedSolution};
