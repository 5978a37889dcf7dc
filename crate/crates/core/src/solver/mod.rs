//! Backward least-squares Monte Carlo for the penalized system and for the
//! direct obstacle projection.
//!
//! Per step `k = K-1, ..., 0`:
//!
//! 1. `E_k[Y^i_{k+1}]` is regressed on a basis of `X_{t_k}`; the same
//!    factorization then gives `Z^{i,l}_k` as the regression of
//!    `(Y^i_{k+1} - E_k[Y^i_{k+1}]) dW^l_k / dt`.
//! 2. The driver is explicit: `A_i = E_k[Y^i_{k+1}] + dt f_i(t_k, X_k, E_k[Y_{k+1}], Z_k)`.
//! 3. Penalized: `y = A_i + n dt sum_{j != i} (y - Y^j + g_ij)^-`, solved
//!    exactly per component and swept Gauss-Seidel over components.
//!    Reflected: `Y^i = max(A_i, max_{j != i}(Y^j - g_ij))` iterated to a
//!    fixed point.
//!
//! Arrays are step-major: entry `(k, path, i)` of `Y` lives at
//! `(k * N + path) * m + i`.

mod export;
mod ladder;
mod scalar;
mod scheme;
mod stats;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::ExprError;
use crate::forward::{ForwardError, PathBundle, TimeGrid};
use crate::model::ProblemSpec;
use crate::regress::{predict, BasisSpec, RegressError, RegressionFit};

pub use export::{write_coefficients_csv, write_paths_csv, SolutionManifest};
pub use ladder::{
    loglog_slope, run_n_ladder, run_n_ladder_on, ConvergenceReport, LadderCheck, LadderEntry, LadderThresholds,
};
pub use scalar::{obstacle_gap, penalty_increment, project, solve_penalty_equation};
pub use scheme::{solve_penalized, solve_plain, solve_reflected_scheme};
pub use stats::{
    complementarity_residual, obstacle_violation, penalty_bound_statistic, summarize, PenaltyBound, SolutionSummary,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("Gauss-Seidel sweeps diverged at step {step}, component {component} (change {change:e})")]
    PicardDivergence { step: usize, component: usize, change: f64 },
    #[error(
        "obstacle projection did not reach a fixed point at step {step}, path {path} \
         (t = {t}, x = {x:?}); the switching costs admit a free loop"
    )]
    ProjectionCycle {
        step: usize,
        path: usize,
        t: f64,
        x: Vec<f64>,
    },
    #[error("regression at step {step}: {source}")]
    Regression { step: usize, source: RegressError },
    #[error("non-finite {what} at step {step}, path {path}, component {component}")]
    NonFinite {
        what: &'static str,
        step: usize,
        path: usize,
        component: usize,
    },
    #[error("coefficient evaluation at step {step}, path {path}: {source}")]
    Domain {
        step: usize,
        path: usize,
        source: ExprError,
    },
    #[error("{0}")]
    Mismatch(String),
    #[error("invalid ladder: {0}")]
    InvalidLadder(String),
    #[error(transparent)]
    Forward(#[from] ForwardError),
}

impl SolverError {
    pub fn is_degenerate_design(&self) -> bool {
        matches!(
            self,
            SolverError::Regression {
                source: RegressError::DegenerateDesign { .. },
                ..
            }
        )
    }
}

/// Gauss-Seidel controls for the per-step component sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Picard {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for Picard {
    fn default() -> Self {
        Picard {
            max_iter: 20,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Penalized,
    Reflected,
    Plain,
}

/// Regressions of one time step: `u[i]` fits `Y^i_k`, `z[i][l]` fits
/// `Z^{i,l}_k`, both as functions of `X_{t_k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFits {
    pub u: Vec<RegressionFit>,
    pub z: Vec<Vec<RegressionFit>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Largest number of component sweeps used on any path, per step.
    pub sweeps: Vec<usize>,
    /// Path-steps where the sweep stopped at `max_iter` without reaching
    /// the tolerance (and without growing).
    pub unconverged: usize,
    /// Largest `|lhs - rhs|` of the semi-implicit step equation.
    pub max_scalar_residual: f64,
    pub max_ridge: f64,
    pub max_condition: f64,
}

/// Output of the backward scheme.
#[derive(Debug, Clone)]
pub struct PenalizedSolution {
    pub spec: Arc<ProblemSpec>,
    pub bundle: Arc<PathBundle>,
    pub scheme: Scheme,
    /// Penalty level `n`; `None` for the reflected and plain schemes.
    pub penalty: Option<f64>,
    pub basis: BasisSpec,
    pub picard: Picard,
    /// One entry per step `k = 0..K-1`.
    pub fits: Vec<StepFits>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub k_proc: Vec<f64>,
    pub k_accumulated: bool,
    pub diagnostics: Diagnostics,
}

impl PenalizedSolution {
    pub fn grid(&self) -> TimeGrid {
        self.bundle.grid
    }

    pub fn n_paths(&self) -> usize {
        self.bundle.n_paths
    }

    pub fn m(&self) -> usize {
        self.spec.m
    }

    pub fn d(&self) -> usize {
        self.spec.d
    }

    /// All `Y` values at step `k`, `N × m`.
    pub fn y_at(&self, k: usize) -> &[f64] {
        let w = self.n_paths() * self.m();
        &self.y[k * w..(k + 1) * w]
    }

    pub fn y(&self, path: usize, k: usize, i: usize) -> f64 {
        self.y[(k * self.n_paths() + path) * self.m() + i]
    }

    pub fn z(&self, path: usize, k: usize, i: usize, l: usize) -> f64 {
        let (m, d) = (self.m(), self.d());
        self.z[((k * self.n_paths() + path) * m + i) * d + l]
    }

    pub fn k(&self, path: usize, k: usize, i: usize) -> f64 {
        self.k_proc[(k * self.n_paths() + path) * self.m() + i]
    }

    /// `u^i(t_k, x)` from the stored regression of `Y^i_k`.
    pub fn u(&self, k: usize, i: usize, x: &[f64]) -> f64 {
        predict(&self.fits[k].u[i], x)
    }

    /// `Y^i_0`; every path starts at the same point, so this is the
    /// (deterministic) value at `(t0, x0)`.
    pub fn y0(&self) -> Vec<f64> {
        (0..self.m()).map(|i| self.y(0, 0, i)).collect()
    }

    /// Fills `K_proc` from the penalty increments
    /// `dK^i_k = n dt sum_{j != i} (Y^i_k - Y^j_k + g_ij(t_k, X_k))^-`.
    /// Reflected-scheme solutions already carry their `K`.
    pub fn accumulate_k(&mut self) -> Result<(), SolverError> {
        scheme::accumulate_k(self)
    }
}

/// Free-function form of [`PenalizedSolution::accumulate_k`].
pub fn accumulate_k(solution: &mut PenalizedSolution) -> Result<(), SolverError> {
    solution.accumulate_k()
}
