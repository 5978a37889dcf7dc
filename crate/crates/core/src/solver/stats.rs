use serde::{Deserialize, Serialize};

use crate::par;

use super::scalar::obstacle_gap;
use super::{PenalizedSolution, SolverError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyBound {
    /// `max n sum_{j != i} (xi^{ij})^- / (1 + |X|^q)`.
    pub sup_scaled: f64,
    /// `max sum_{j != i} (xi^{ij})^-`.
    pub sup_raw: f64,
}

/// Every path statistic of a solution, gathered in one pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub penalty: PenaltyBound,
    /// `max (Y^i - max_{j != i}(Y^j - g_ij))^-`.
    pub obstacle_violation: f64,
    /// Path mean of `sum_k sum_i |Y^i_k - max_{j != i}(Y^j_k - g_ij)| dK^i_k`.
    pub complementarity: f64,
    /// Path mean of `max_k |Y_k|^2`.
    pub sup_y_sq: f64,
    /// Path mean of `sum_k dt |Z_k|^2`.
    pub int_z_sq: f64,
    /// Path mean of `|K_T|^2`.
    pub k_terminal_sq: f64,
    pub y0: Vec<f64>,
}

#[derive(Default)]
struct Partial {
    scaled: f64,
    raw: f64,
    violation: f64,
    comp: f64,
    sup_y: f64,
    int_z: f64,
    k_t: f64,
}

/// Computes all statistics. `K` must have been accumulated.
pub fn summarize(sol: &PenalizedSolution) -> Result<SolutionSummary, SolverError> {
    assert!(sol.k_accumulated, "accumulate K before computing statistics");
    let (m, d, n_paths) = (sol.m(), sol.d(), sol.n_paths());
    let grid = sol.grid();
    let dt = grid.dt();
    let steps = grid.steps;
    let n = sol.penalty.unwrap_or(0.0);
    let q = sol.spec.q_growth;
    let spec = &sol.spec;
    let bundle = &sol.bundle;

    let parts = par::map_chunks(n_paths, |range| -> Result<Partial, SolverError> {
        let mut acc = Partial::default();
        let mut g = vec![0.0; m * m];
        let mut y = vec![0.0; m];
        for p in range {
            let (mut sup_y, mut int_z, mut comp) = (0.0f64, 0.0, 0.0);
            for k in 0..=steps {
                let x = bundle.state(p, k);
                spec.cost_matrix(grid.time(k), x, &mut g)
                    .map_err(|source| SolverError::Domain {
                        step: k,
                        path: p,
                        source,
                    })?;
                for (i, v) in y.iter_mut().enumerate() {
                    *v = sol.y(p, k, i);
                }
                let growth = 1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(q);
                let mut y_sq = 0.0;
                for i in 0..m {
                    y_sq += y[i] * y[i];
                    let neg: f64 = (0..m)
                        .filter(|&j| j != i)
                        .map(|j| (y[j] - g[i * m + j] - y[i]).max(0.0))
                        .sum();
                    acc.raw = acc.raw.max(neg);
                    acc.scaled = acc.scaled.max(n * neg / growth);
                    let gap = obstacle_gap(&y, &g, i);
                    acc.violation = acc.violation.max((-gap).max(0.0));
                    if k < steps {
                        let dk = sol.k(p, k + 1, i) - sol.k(p, k, i);
                        if dk > 0.0 {
                            comp += gap.abs() * dk;
                        }
                        for l in 0..d {
                            int_z += dt * sol.z(p, k, i, l).powi(2);
                        }
                    }
                }
                sup_y = sup_y.max(y_sq);
            }
            acc.sup_y += sup_y;
            acc.int_z += int_z;
            acc.comp += comp;
            acc.k_t += (0..m).map(|i| sol.k(p, steps, i).powi(2)).sum::<f64>();
        }
        Ok(acc)
    });

    let mut total = Partial::default();
    for part in parts {
        let part = part?;
        total.scaled = total.scaled.max(part.scaled);
        total.raw = total.raw.max(part.raw);
        total.violation = total.violation.max(part.violation);
        total.comp += part.comp;
        total.sup_y += part.sup_y;
        total.int_z += part.int_z;
        total.k_t += part.k_t;
    }
    let count = n_paths as f64;
    Ok(SolutionSummary {
        penalty: PenaltyBound {
            sup_scaled: total.scaled,
            sup_raw: total.raw,
        },
        obstacle_violation: total.violation,
        complementarity: total.comp / count,
        sup_y_sq: total.sup_y / count,
        int_z_sq: total.int_z / count,
        k_terminal_sq: total.k_t / count,
        y0: sol.y0(),
    })
}

pub fn penalty_bound_statistic(sol: &PenalizedSolution) -> Result<PenaltyBound, SolverError> {
    Ok(summarize(sol)?.penalty)
}

pub fn complementarity_residual(sol: &PenalizedSolution) -> Result<f64, SolverError> {
    Ok(summarize(sol)?.complementarity)
}

pub fn obstacle_violation(sol: &PenalizedSolution) -> Result<f64, SolverError> {
    Ok(summarize(sol)?.obstacle_violation)
}
