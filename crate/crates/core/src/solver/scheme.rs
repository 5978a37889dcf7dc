use std::sync::Arc;

use crate::expr::Env;
use crate::forward::PathBundle;
use crate::model::ProblemSpec;
use crate::par;
use crate::regress::{BasisSpec, Projector};

use super::scalar::{penalty_increment, project, solve_penalty_equation};
use super::{Diagnostics, PenalizedSolution, Picard, Scheme, SolverError, StepFits};

/// Penalized scheme at level `n`.
pub fn solve_penalized(
    spec: &Arc<ProblemSpec>,
    bundle: &Arc<PathBundle>,
    basis: &BasisSpec,
    n: f64,
    picard: Picard,
) -> Result<PenalizedSolution, SolverError> {
    if !(n >= 1.0 && n.is_finite()) {
        return Err(SolverError::Mismatch(format!("penalty level must be >= 1, got {n}")));
    }
    backward(spec, bundle, basis, Scheme::Penalized, Some(n), picard)
}

/// Direct projection onto the obstacle set instead of a penalty.
pub fn solve_reflected_scheme(
    spec: &Arc<ProblemSpec>,
    bundle: &Arc<PathBundle>,
    basis: &BasisSpec,
    picard: Picard,
) -> Result<PenalizedSolution, SolverError> {
    backward(spec, bundle, basis, Scheme::Reflected, None, picard)
}

fn check_inputs(spec: &ProblemSpec, bundle: &PathBundle, picard: Picard) -> Result<(), SolverError> {
    if bundle.d != spec.d {
        return Err(SolverError::Mismatch(format!(
            "bundle has d = {}, problem has d = {}",
            bundle.d, spec.d
        )));
    }
    if bundle.spec_name != spec.name {
        return Err(SolverError::Mismatch(format!(
            "bundle was simulated for `{}`, not `{}`",
            bundle.spec_name, spec.name
        )));
    }
    if bundle.n_paths == 0 {
        return Err(SolverError::Mismatch("bundle has no paths".into()));
    }
    if picard.max_iter == 0 || !(picard.tol > 0.0) {
        return Err(SolverError::Mismatch("picard needs max_iter >= 1 and tol > 0".into()));
    }
    Ok(())
}

fn terminal(spec: &ProblemSpec, bundle: &PathBundle, out: &mut [f64]) -> Result<(), SolverError> {
    let (m, d, steps) = (spec.m, spec.d, bundle.grid.steps);
    let states = bundle.states_at(steps);
    par::try_for_each_chunk_mut(out, par::CHUNK * m, |c, chunk| {
        for (r, row) in chunk.chunks_exact_mut(m).enumerate() {
            let p = c * par::CHUNK + r;
            let x = &states[p * d..(p + 1) * d];
            for (i, v) in row.iter_mut().enumerate() {
                *v = spec.terminal(i, x).map_err(|source| SolverError::Domain {
                    step: steps,
                    path: p,
                    source,
                })?;
                if !v.is_finite() {
                    return Err(SolverError::NonFinite {
                        what: "terminal value",
                        step: steps,
                        path: p,
                        component: i + 1,
                    });
                }
            }
        }
        Ok(())
    })
}

fn column(rows: &[f64], m: usize, i: usize) -> Vec<f64> {
    rows.iter().skip(i).step_by(m).copied().collect()
}

/// Regression part of a step shared by every scheme: continuation values
/// `E_k[Y^i_{k+1}]` (returned, one vector per component) and `Z_k`
/// (written to `z_k`, `N × m × d`), plus the `Z` fits.
struct Regressed {
    projector: Projector,
    continuation: Vec<Vec<f64>>,
    z_fits: Vec<Vec<crate::regress::RegressionFit>>,
}

fn regress_step(
    spec: &ProblemSpec,
    bundle: &PathBundle,
    basis: &BasisSpec,
    k: usize,
    y_next: &[f64],
    z_k: &mut [f64],
) -> Result<Regressed, SolverError> {
    let (m, d, n_paths) = (spec.m, spec.d, bundle.n_paths);
    let dt = bundle.grid.dt();
    let states = bundle.states_at(k);
    let dw = bundle.increments_at(k);
    let wrap = |source| SolverError::Regression { step: k, source };

    let frozen = basis.freeze(states, d).map_err(wrap)?;
    let projector = Projector::new(frozen, states, 0.0).map_err(wrap)?;

    let next: Vec<Vec<f64>> = (0..m).map(|i| column(y_next, m, i)).collect();
    let refs: Vec<&[f64]> = next.iter().map(Vec::as_slice).collect();
    let coefs = projector.coefficients(&refs).map_err(wrap)?;
    let continuation: Vec<Vec<f64>> = coefs.iter().map(|c| projector.fitted(c)).collect();

    let mut z_targets = Vec::with_capacity(m * d);
    for i in 0..m {
        for l in 0..d {
            let t: Vec<f64> = (0..n_paths)
                .map(|p| (next[i][p] - continuation[i][p]) * dw[p * d + l] / dt)
                .collect();
            z_targets.push(t);
        }
    }
    let refs: Vec<&[f64]> = z_targets.iter().map(Vec::as_slice).collect();
    let z_coefs = projector.coefficients(&refs).map_err(wrap)?;
    let mut z_fits = vec![Vec::with_capacity(d); m];
    for (col, coef) in z_coefs.into_iter().enumerate() {
        let (i, l) = (col / d, col % d);
        let fitted = projector.fitted(&coef);
        for (p, v) in fitted.iter().enumerate() {
            z_k[(p * m + i) * d + l] = *v;
        }
        z_fits[i].push(projector.fit_record(coef, &z_targets[col]));
    }
    Ok(Regressed {
        projector,
        continuation,
        z_fits,
    })
}

/// `A_i = E_k[Y^i_{k+1}] + dt f_i(t_k, X_k, E_k[Y_{k+1}], Z_k)` for every
/// path, `N × m`.
fn explicit_part(
    spec: &ProblemSpec,
    bundle: &PathBundle,
    k: usize,
    continuation: &[Vec<f64>],
    z_k: &[f64],
) -> Result<Vec<f64>, SolverError> {
    let (m, d) = (spec.m, spec.d);
    let dt = bundle.grid.dt();
    let t = bundle.grid.time(k);
    let states = bundle.states_at(k);
    let mut a = vec![0.0; bundle.n_paths * m];
    par::try_for_each_chunk_mut(&mut a, par::CHUNK * m, |c, chunk| {
        let mut yhat = vec![0.0; m];
        for (r, row) in chunk.chunks_exact_mut(m).enumerate() {
            let p = c * par::CHUNK + r;
            for (i, v) in yhat.iter_mut().enumerate() {
                *v = continuation[i][p];
            }
            let x = &states[p * d..(p + 1) * d];
            let env = Env::new(t, x).with_y(&yhat).with_z(&z_k[p * m * d..(p + 1) * m * d], d);
            for (i, v) in row.iter_mut().enumerate() {
                let f = spec.driver(i, &env).map_err(|source| SolverError::Domain {
                    step: k,
                    path: p,
                    source,
                })?;
                *v = yhat[i] + dt * f;
                if !v.is_finite() {
                    return Err(SolverError::NonFinite {
                        what: "driver value",
                        step: k,
                        path: p,
                        component: i + 1,
                    });
                }
            }
        }
        Ok(())
    })?;
    Ok(a)
}

#[derive(Default)]
struct SweepStats {
    sweeps: usize,
    unconverged: usize,
    residual: f64,
}

impl SweepStats {
    fn merge(mut self, o: SweepStats) -> SweepStats {
        self.sweeps = self.sweeps.max(o.sweeps);
        self.unconverged += o.unconverged;
        self.residual = self.residual.max(o.residual);
        self
    }
}

fn penalized_step(
    spec: &ProblemSpec,
    bundle: &PathBundle,
    k: usize,
    c: f64,
    picard: Picard,
    a: &[f64],
    y_k: &mut [f64],
) -> Result<SweepStats, SolverError> {
    let (m, d) = (spec.m, spec.d);
    let t = bundle.grid.time(k);
    let states = bundle.states_at(k);
    let parts = par::try_map_chunks_mut(y_k, par::CHUNK * m, |ch, chunk| {
        let mut g = vec![0.0; m * m];
        let mut betas = Vec::with_capacity(m);
        let mut stats = SweepStats::default();
        for (r, y) in chunk.chunks_exact_mut(m).enumerate() {
            let p = ch * par::CHUNK + r;
            let x = &states[p * d..(p + 1) * d];
            spec.cost_matrix(t, x, &mut g).map_err(|source| SolverError::Domain {
                step: k,
                path: p,
                source,
            })?;
            let a = &a[p * m..(p + 1) * m];
            y.copy_from_slice(a);
            let mut first = None;
            let mut converged = false;
            let mut sweeps = 0;
            let mut worst = 0;
            while sweeps < picard.max_iter {
                sweeps += 1;
                let mut change = 0.0;
                for i in 0..m {
                    betas.clear();
                    betas.extend((0..m).filter(|&j| j != i).map(|j| y[j] - g[i * m + j]));
                    let v = solve_penalty_equation(a[i], c, &mut betas);
                    let delta = (v - y[i]).abs();
                    if delta > change {
                        change = delta;
                        worst = i;
                    }
                    y[i] = v;
                }
                let first = *first.get_or_insert(change);
                if change < picard.tol {
                    converged = true;
                    break;
                }
                if !change.is_finite() || (sweeps == picard.max_iter && change > first) {
                    return Err(SolverError::PicardDivergence {
                        step: k,
                        component: worst + 1,
                        change,
                    });
                }
            }
            if !converged {
                stats.unconverged += 1;
            }
            stats.sweeps = stats.sweeps.max(sweeps);
            for i in 0..m {
                let res = (y[i] - a[i] - penalty_increment(y, &g, i, c)).abs();
                stats.residual = stats.residual.max(res);
                if !y[i].is_finite() {
                    return Err(SolverError::NonFinite {
                        what: "Y",
                        step: k,
                        path: p,
                        component: i + 1,
                    });
                }
            }
        }
        Ok(stats)
    })?;
    Ok(parts.into_iter().fold(SweepStats::default(), SweepStats::merge))
}

fn reflected_step(
    spec: &ProblemSpec,
    bundle: &PathBundle,
    k: usize,
    a: &[f64],
    y_k: &mut [f64],
) -> Result<SweepStats, SolverError> {
    let (m, d) = (spec.m, spec.d);
    let t = bundle.grid.time(k);
    let states = bundle.states_at(k);
    let parts = par::try_map_chunks_mut(y_k, par::CHUNK * m, |ch, chunk| {
        let mut g = vec![0.0; m * m];
        let mut stats = SweepStats::default();
        for (r, y) in chunk.chunks_exact_mut(m).enumerate() {
            let p = ch * par::CHUNK + r;
            let x = &states[p * d..(p + 1) * d];
            spec.cost_matrix(t, x, &mut g).map_err(|source| SolverError::Domain {
                step: k,
                path: p,
                source,
            })?;
            match project(&a[p * m..(p + 1) * m], &g, y) {
                Some(s) => stats.sweeps = stats.sweeps.max(s),
                None => {
                    return Err(SolverError::ProjectionCycle {
                        step: k,
                        path: p,
                        t,
                        x: x.to_vec(),
                    })
                }
            }
        }
        Ok(stats)
    })?;
    Ok(parts.into_iter().fold(SweepStats::default(), SweepStats::merge))
}

fn u_fits(
    projector: &Projector,
    y_k: &[f64],
    m: usize,
    k: usize,
) -> Result<Vec<crate::regress::RegressionFit>, SolverError> {
    let cols: Vec<Vec<f64>> = (0..m).map(|i| column(y_k, m, i)).collect();
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    let coefs = projector
        .coefficients(&refs)
        .map_err(|source| SolverError::Regression { step: k, source })?;
    Ok(coefs
        .into_iter()
        .zip(&cols)
        .map(|(c, t)| projector.fit_record(c, t))
        .collect())
}

fn backward(
    spec: &Arc<ProblemSpec>,
    bundle: &Arc<PathBundle>,
    basis: &BasisSpec,
    scheme: Scheme,
    penalty: Option<f64>,
    picard: Picard,
) -> Result<PenalizedSolution, SolverError> {
    check_inputs(spec, bundle, picard)?;
    let (m, d, n_paths) = (spec.m, spec.d, bundle.n_paths);
    let steps = bundle.grid.steps;
    let dt = bundle.grid.dt();
    let w = n_paths * m;

    let mut y = vec![0.0; (steps + 1) * w];
    let mut z = vec![0.0; steps * w * d];
    let mut k_proc = vec![0.0; (steps + 1) * w];
    let mut fits = Vec::with_capacity(steps);
    let mut diag = Diagnostics {
        sweeps: vec![0; steps],
        ..Diagnostics::default()
    };
    terminal(spec, bundle, &mut y[steps * w..])?;

    for k in (0..steps).rev() {
        let (head, tail) = y.split_at_mut((k + 1) * w);
        let y_k = &mut head[k * w..];
        let y_next = &tail[..w];
        let z_k = &mut z[k * w * d..(k + 1) * w * d];

        let reg = regress_step(spec, bundle, basis, k, y_next, z_k)?;
        let a = explicit_part(spec, bundle, k, &reg.continuation, z_k)?;
        let stats = match scheme {
            Scheme::Penalized => {
                let c = penalty.expect("penalized scheme has a level") * dt;
                penalized_step(spec, bundle, k, c, picard, &a, y_k)?
            }
            Scheme::Reflected => {
                let s = reflected_step(spec, bundle, k, &a, y_k)?;
                let dk = &mut k_proc[(k + 1) * w..(k + 2) * w];
                for ((v, yv), av) in dk.iter_mut().zip(y_k.iter()).zip(&a) {
                    *v = yv - av;
                }
                s
            }
            Scheme::Plain => unreachable!("plain runs use solve_plain"),
        };
        diag.sweeps[k] = stats.sweeps;
        diag.unconverged += stats.unconverged;
        diag.max_scalar_residual = diag.max_scalar_residual.max(stats.residual);
        diag.max_ridge = diag.max_ridge.max(reg.projector.lambda());
        diag.max_condition = diag.max_condition.max(reg.projector.condition());
        fits.push(StepFits {
            u: u_fits(&reg.projector, y_k, m, k)?,
            z: reg.z_fits,
        });
    }
    fits.reverse();

    let k_accumulated = scheme == Scheme::Reflected;
    if k_accumulated {
        for k in 0..steps {
            let (head, tail) = k_proc.split_at_mut((k + 1) * w);
            let prev = &head[k * w..];
            for (next, p) in tail[..w].iter_mut().zip(prev) {
                *next += p;
            }
        }
    }

    Ok(PenalizedSolution {
        spec: Arc::clone(spec),
        bundle: Arc::clone(bundle),
        scheme,
        penalty,
        basis: basis.clone(),
        picard,
        fits,
        y,
        z,
        k_proc,
        k_accumulated,
        diagnostics: diag,
    })
}

/// Plain (unreflected) backward LSMC for the system: `Y^i_k = A_i`. Used as
/// the reference for the single-mode case, where the penalty sum is empty.
pub fn solve_plain(
    spec: &Arc<ProblemSpec>,
    bundle: &Arc<PathBundle>,
    basis: &BasisSpec,
) -> Result<PenalizedSolution, SolverError> {
    let picard = Picard::default();
    check_inputs(spec, bundle, picard)?;
    let (m, d) = (spec.m, spec.d);
    let steps = bundle.grid.steps;
    let w = bundle.n_paths * m;
    let mut y = vec![0.0; (steps + 1) * w];
    let mut z = vec![0.0; steps * w * d];
    let mut fits = Vec::with_capacity(steps);
    let mut diag = Diagnostics {
        sweeps: vec![0; steps],
        ..Diagnostics::default()
    };
    terminal(spec, bundle, &mut y[steps * w..])?;
    for k in (0..steps).rev() {
        let (head, tail) = y.split_at_mut((k + 1) * w);
        let z_k = &mut z[k * w * d..(k + 1) * w * d];
        let reg = regress_step(spec, bundle, basis, k, &tail[..w], z_k)?;
        let a = explicit_part(spec, bundle, k, &reg.continuation, z_k)?;
        let y_k = &mut head[k * w..];
        y_k.copy_from_slice(&a);
        diag.max_ridge = diag.max_ridge.max(reg.projector.lambda());
        diag.max_condition = diag.max_condition.max(reg.projector.condition());
        fits.push(StepFits {
            u: u_fits(&reg.projector, y_k, m, k)?,
            z: reg.z_fits,
        });
    }
    fits.reverse();
    Ok(PenalizedSolution {
        spec: Arc::clone(spec),
        bundle: Arc::clone(bundle),
        scheme: Scheme::Plain,
        penalty: None,
        basis: basis.clone(),
        picard,
        fits,
        y,
        z,
        k_proc: vec![0.0; (steps + 1) * w],
        k_accumulated: true,
        diagnostics: diag,
    })
}

pub(super) fn accumulate_k(sol: &mut PenalizedSolution) -> Result<(), SolverError> {
    if sol.k_accumulated {
        return Ok(());
    }
    let (m, d, n_paths) = (sol.m(), sol.d(), sol.n_paths());
    let grid = sol.grid();
    let c = sol.penalty.unwrap_or(0.0) * grid.dt();
    let w = n_paths * m;
    let spec = Arc::clone(&sol.spec);
    let bundle = Arc::clone(&sol.bundle);
    sol.k_proc[..w].iter_mut().for_each(|v| *v = 0.0);
    for k in 0..grid.steps {
        let t = grid.time(k);
        let states = bundle.states_at(k);
        let y_k = &sol.y[k * w..(k + 1) * w];
        let (head, tail) = sol.k_proc.split_at_mut((k + 1) * w);
        let prev = &head[k * w..];
        par::try_for_each_chunk_mut(&mut tail[..w], par::CHUNK * m, |ch, chunk| {
            let mut g = vec![0.0; m * m];
            for (r, out) in chunk.chunks_exact_mut(m).enumerate() {
                let p = ch * par::CHUNK + r;
                spec.cost_matrix(t, &states[p * d..(p + 1) * d], &mut g)
                    .map_err(|source| SolverError::Domain {
                        step: k,
                        path: p,
                        source,
                    })?;
                let y = &y_k[p * m..(p + 1) * m];
                for (i, o) in out.iter_mut().enumerate() {
                    *o = prev[p * m + i] + penalty_increment(y, &g, i, c);
                }
            }
            Ok::<(), SolverError>(())
        })?;
    }
    sol.k_accumulated = true;
    Ok(())
}
