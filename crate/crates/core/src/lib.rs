//! Numerical solvers for Markovian systems of reflected BSDEs with
//! interconnected obstacles, where each driver may depend on every
//! component of Z.
//!
//! The pipeline is: parse a [`model::ProblemSpec`] from coefficient
//! expressions, simulate a [`forward::PathBundle`], then run the penalized
//! or projected backward least-squares scheme in [`solver`]. The
//! [`oracle`] module provides an independent lattice dynamic program for
//! decoupled (optimal switching) problems.

// Negated float comparisons are used on purpose so that NaN fails checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod expr;
pub mod forward;
pub mod model;
pub mod oracle;
pub mod par;
pub mod regress;
pub mod solver;

use thiserror::Error;

pub use expr::ExprError;
pub use forward::ForwardError;
pub use oracle::OracleError;
pub use regress::RegressError;
pub use solver::SolverError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid problem: {0}")]
    InvalidSpec(String),
    #[error("in {location}: {source}")]
    Expr { location: String, source: ExprError },
    #[error(transparent)]
    Domain(#[from] ExprError),
    #[error("non-finite {what} at t = {t}, x = {x:?}")]
    NonFiniteEntry { what: String, t: f64, x: Vec<f64> },
    #[error("validation grid is empty")]
    EmptyGrid,
}
