//! Lattice dynamic programming for decoupled problems (optimal switching),
//! plus an exhaustive search over switching decisions on tiny instances.
//!
//! The state grid is one-dimensional. The Euler transition
//! `X_{k+1} | X_k = x ~ N(x + b dt, sigma^2 dt)` is integrated by
//! Gauss-Hermite quadrature and the next-step value is interpolated
//! piecewise linearly; outside the grid the boundary segment is extended
//! linearly.

use std::io::{self, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Env, ExprError, Symbol};
use crate::forward::{PathBundle, TimeGrid};
use crate::model::ProblemSpec;
use crate::par;
use crate::solver::project;

pub const DEFAULT_NODES: usize = 401;
pub const DEFAULT_ORDER: usize = 7;
/// Half-width of the default grid in units of `sigma sqrt(T - t0)`.
pub const DEFAULT_HALF_WIDTH: f64 = 5.0;

/// Largest tiny instance accepted by [`enumerate_strategies_small`].
pub const ENUM_MAX_MODES: usize = 3;
pub const ENUM_MAX_STEPS: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("driver f{mode} references `{symbol}`; the oracle needs drivers of (t, x) only")]
    DecoupledViolation { mode: usize, symbol: String },
    #[error("the lattice oracle is one-dimensional, problem has d = {0}")]
    Dimension(usize),
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("instance too large for enumeration: {0}")]
    TooLarge(String),
    #[error("switching fixed point not reached at step {step}, x = {x}")]
    ProjectionCycle { step: usize, x: f64 },
    #[error("coefficient evaluation at t = {t}, x = {x}: {source}")]
    Domain { t: f64, x: f64, source: ExprError },
    #[error("{0}")]
    Mismatch(String),
}

/// Nodes and weights with `sum w_q phi(z_q) ~ E[phi(N(0, 1))]`, exact for
/// polynomials of degree `< 2 * order`.
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "quadrature order must be positive");
    // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite
    // polynomials.
    let jacobi = DMatrix::from_fn(order, order, |r, c| {
        if r.abs_diff(c) == 1 {
            (r.max(c) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|q| (eig.eigenvalues[q], eig.eigenvectors[(0, q)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrize to remove eigen-solver asymmetry.
    let nodes: Vec<f64> = (0..order)
        .map(|q| 0.5 * (pairs[q].0 - pairs[order - 1 - q].0))
        .collect();
    let raw: Vec<f64> = (0..order)
        .map(|q| 0.5 * (pairs[q].1 + pairs[order - 1 - q].1))
        .collect();
    let total: f64 = raw.iter().sum();
    (nodes, raw.iter().map(|w| w / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub lower: f64,
    pub upper: f64,
    pub nodes: usize,
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
}

fn default_order() -> usize {
    DEFAULT_ORDER
}

impl LatticeSpec {
    /// `[x - 5 sigma sqrt(T - t0), x + 5 sigma sqrt(T - t0)]` with `sigma`
    /// taken at `(t0, x)`.
    pub fn around(spec: &ProblemSpec, grid: &TimeGrid, x: f64, nodes: usize) -> Result<LatticeSpec, OracleError> {
        if spec.d != 1 {
            return Err(OracleError::Dimension(spec.d));
        }
        let mut s = [0.0];
        spec.diffusion(grid.t0, &[x], &mut s)
            .map_err(|source| OracleError::Domain { t: grid.t0, x, source })?;
        let half = DEFAULT_HALF_WIDTH * s[0].abs().max(1e-12) * (grid.horizon - grid.t0).sqrt();
        Ok(LatticeSpec {
            lower: x - half,
            upper: x + half,
            nodes,
            quadrature_order: DEFAULT_ORDER,
        })
    }

    fn check(&self) -> Result<(), OracleError> {
        if self.nodes < 3 {
            return Err(OracleError::InvalidLattice(format!(
                "need at least 3 nodes, got {}",
                self.nodes
            )));
        }
        if !(self.lower < self.upper) || !self.lower.is_finite() || !self.upper.is_finite() {
            return Err(OracleError::InvalidLattice(format!(
                "need lower < upper, got [{}, {}]",
                self.lower, self.upper
            )));
        }
        if self.quadrature_order == 0 {
            return Err(OracleError::InvalidLattice("quadrature order must be positive".into()));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.upper - self.lower) / (self.nodes - 1) as f64
    }

    pub fn node(&self, n: usize) -> f64 {
        if n + 1 == self.nodes {
            self.upper
        } else {
            self.lower + n as f64 * self.step()
        }
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nodes).map(|n| self.node(n)).collect()
    }

    /// Left node of the interpolation segment and the weight of the right
    /// node; outside the grid the boundary segment is extended.
    fn segment(&self, y: f64) -> (usize, f64) {
        let h = self.step();
        let raw = ((y - self.lower) / h).floor();
        let a = if raw.is_nan() {
            0
        } else {
            raw.clamp(0.0, (self.nodes - 2) as f64) as usize
        };
        (a, (y - self.node(a)) / h)
    }

    fn interpolate(&self, values: &[f64], y: f64) -> f64 {
        let (a, w) = self.segment(y);
        (1.0 - w) * values[a] + w * values[a + 1]
    }

    pub fn nearest(&self, y: f64) -> usize {
        let raw = ((y - self.lower) / self.step()).round();
        if raw.is_nan() {
            0
        } else {
            raw.clamp(0.0, (self.nodes - 1) as f64) as usize
        }
    }
}

/// `0` means continue; `j >= 1` means switch to mode `j` (one-based).
pub type Action = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingValue {
    pub grid: TimeGrid,
    pub lattice: LatticeSpec,
    pub m: usize,
    /// `values[(k * m + i) * nodes + n]`.
    pub values: Vec<f64>,
    /// Same layout as `values`.
    pub actions: Vec<Action>,
}

impl SwitchingValue {
    fn at(&self, k: usize, i: usize) -> std::ops::Range<usize> {
        let w = self.lattice.nodes;
        (k * self.m + i) * w..(k * self.m + i + 1) * w
    }

    pub fn values_at(&self, k: usize, i: usize) -> &[f64] {
        &self.values[self.at(k, i)]
    }

    /// `V^i(t_k, x)`, linearly interpolated.
    pub fn value(&self, k: usize, i: usize, x: f64) -> f64 {
        self.lattice.interpolate(self.values_at(k, i), x)
    }

    /// Action at the lattice node nearest to `x`.
    pub fn action(&self, k: usize, i: usize, x: f64) -> Action {
        self.actions[self.at(k, i)][self.lattice.nearest(x)]
    }

    /// `t,x,mode,value,action` for every node, step and mode.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,x,mode,value,action")?;
        let xs = self.lattice.xs();
        for k in 0..=self.grid.steps {
            let t = self.grid.time(k);
            for i in 0..self.m {
                let r = self.at(k, i);
                for (n, x) in xs.iter().enumerate() {
                    writeln!(
                        out,
                        "{t},{x},{},{},{}",
                        i + 1,
                        self.values[r.start + n],
                        self.actions[r.start + n]
                    )?;
                }
            }
        }
        Ok(())
    }
}

fn require_decoupled(spec: &ProblemSpec) -> Result<(), OracleError> {
    if spec.d != 1 {
        return Err(OracleError::Dimension(spec.d));
    }
    for (i, f) in spec.f.iter().enumerate() {
        if let Some(s) = f
            .symbols()
            .into_iter()
            .find(|s| matches!(s, Symbol::Y(_) | Symbol::Z(..)))
        {
            return Err(OracleError::DecoupledViolation {
                mode: i + 1,
                symbol: s.to_string(),
            });
        }
    }
    Ok(())
}

/// Per-node coefficients of one time step.
struct Local {
    mean: f64,
    sd: f64,
    f: Vec<f64>,
    g: Vec<f64>,
}

fn local(spec: &ProblemSpec, t: f64, dt: f64, x: f64) -> Result<Local, OracleError> {
    let dom = |source| OracleError::Domain { t, x, source };
    let m = spec.m;
    let mut b = [0.0];
    let mut s = [0.0];
    spec.drift(t, &[x], &mut b).map_err(dom)?;
    spec.diffusion(t, &[x], &mut s).map_err(dom)?;
    let env = Env::new(t, std::slice::from_ref(&x));
    let f = (0..m)
        .map(|i| spec.driver(i, &env))
        .collect::<Result<Vec<_>, _>>()
        .map_err(dom)?;
    let mut g = vec![0.0; m * m];
    spec.cost_matrix(t, &[x], &mut g).map_err(dom)?;
    Ok(Local {
        mean: x + b[0] * dt,
        sd: s[0].abs() * dt.sqrt(),
        f,
        g,
    })
}

/// Backward induction
/// `V^i(t_k, x) = max(Q^i, max_{j != i}(V^j(t_k, x) - g_ij))`,
/// `Q^i = E[V^i(t_{k+1}, X_{k+1}) | x] + dt f_i(t_k, x)`.
pub fn solve_switching_dp(
    spec: &ProblemSpec,
    lattice: &LatticeSpec,
    grid: &TimeGrid,
) -> Result<SwitchingValue, OracleError> {
    require_decoupled(spec)?;
    lattice.check()?;
    let (m, w, steps) = (spec.m, lattice.nodes, grid.steps);
    let dt = grid.dt();
    let (z, wq) = gauss_hermite(lattice.quadrature_order);
    let xs = lattice.xs();

    let mut values = vec![0.0; (steps + 1) * m * w];
    let mut actions = vec![0; (steps + 1) * m * w];
    for i in 0..m {
        for (n, &x) in xs.iter().enumerate() {
            values[(steps * m + i) * w + n] = spec.terminal(i, &[x]).map_err(|source| OracleError::Domain {
                t: grid.horizon,
                x,
                source,
            })?;
        }
    }

    for k in (0..steps).rev() {
        let t = grid.time(k);
        let (head, tail) = values.split_at_mut((k + 1) * m * w);
        let next = &tail[..m * w];
        let nodes = par::map_indices(w, |n| -> Result<(Vec<f64>, Vec<Action>), OracleError> {
            let x = xs[n];
            let loc = local(spec, t, dt, x)?;
            let q: Vec<f64> = (0..m)
                .map(|i| {
                    let v = &next[i * w..(i + 1) * w];
                    let e: f64 = z
                        .iter()
                        .zip(&wq)
                        .map(|(zq, wq)| wq * lattice.interpolate(v, loc.mean + loc.sd * zq))
                        .sum();
                    e + dt * loc.f[i]
                })
                .collect();
            let mut v = vec![0.0; m];
            if project(&q, &loc.g, &mut v).is_none() {
                return Err(OracleError::ProjectionCycle { step: k, x });
            }
            let acts = (0..m)
                .map(|i| {
                    if v[i] == q[i] {
                        return 0;
                    }
                    (0..m)
                        .filter(|&j| j != i)
                        .find(|&j| v[j] - loc.g[i * m + j] == v[i])
                        .map_or(0, |j| j + 1)
                })
                .collect();
            Ok((v, acts))
        });
        let cur = &mut head[k * m * w..];
        for (n, r) in nodes.into_iter().enumerate() {
            let (v, a) = r?;
            for i in 0..m {
                cur[i * w + n] = v[i];
                actions[(k * m + i) * w + n] = a[i];
            }
        }
    }
    Ok(SwitchingValue {
        grid: *grid,
        lattice: *lattice,
        m,
        values,
        actions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerationResult {
    /// Best value per starting mode at `(t0, x)`.
    pub values: Vec<f64>,
    /// Best mode chain at `t0` per starting mode (starting mode first).
    pub first_moves: Vec<Vec<usize>>,
    /// Number of (history, mode, decision) combinations evaluated.
    pub evaluated: u64,
}

/// Switching chains out of `a` through distinct modes, with their cost:
/// `(end mode, chain, total cost)`.
fn chains(a: usize, g: &[f64], m: usize) -> Vec<(usize, Vec<usize>, f64)> {
    fn walk(path: &mut Vec<usize>, cost: f64, g: &[f64], m: usize, out: &mut Vec<(usize, Vec<usize>, f64)>) {
        let last = *path.last().unwrap();
        out.push((last, path.clone(), cost));
        for j in 0..m {
            if !path.contains(&j) {
                path.push(j);
                walk(path, cost + g[last * m + j], g, m, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(&mut vec![a], 0.0, g, m, &mut out);
    out
}

struct Tree<'a> {
    spec: &'a ProblemSpec,
    lattice: &'a LatticeSpec,
    grid: &'a TimeGrid,
    z: Vec<f64>,
    wq: Vec<f64>,
    evaluated: u64,
}

impl Tree<'_> {
    /// Best value from lattice node `n` at step `k`, holding mode `a`, over
    /// every decision at this and every later history node.
    fn best(&mut self, k: usize, n: usize, a: usize) -> Result<(f64, Vec<usize>), OracleError> {
        let x = self.lattice.node(n);
        if k == self.grid.steps {
            let h = self.spec.terminal(a, &[x]).map_err(|source| OracleError::Domain {
                t: self.grid.horizon,
                x,
                source,
            })?;
            return Ok((h, vec![a]));
        }
        let m = self.spec.m;
        let dt = self.grid.dt();
        let loc = local(self.spec, self.grid.time(k), dt, x)?;
        // Continuation value per end mode, computed once per history node;
        // each still expands the full subtree.
        let mut cont = vec![0.0; m];
        for (b, c) in cont.iter_mut().enumerate() {
            let mut e = 0.0;
            for q in 0..self.z.len() {
                let y = loc.mean + loc.sd * self.z[q];
                let (left, w) = self.lattice.segment(y);
                let vl = self.best(k + 1, left, b)?.0;
                let vr = self.best(k + 1, left + 1, b)?.0;
                e += self.wq[q] * ((1.0 - w) * vl + w * vr);
            }
            *c = e + dt * loc.f[b];
        }
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for (b, chain, cost) in chains(a, &loc.g, m) {
            self.evaluated += 1;
            let v = cont[b] - cost;
            if v > best.0 {
                best = (v, chain);
            }
        }
        Ok(best)
    }
}

/// Exhaustive search over switching decisions on the scenario tree induced
/// by the quadrature and the interpolation weights (no recombination, no
/// memoization), from `(t0, x)`. Shares the DP's discretization, so on the
/// same lattice it must reproduce the DP value.
pub fn enumerate_strategies_small(
    spec: &ProblemSpec,
    lattice: &LatticeSpec,
    grid: &TimeGrid,
    x: f64,
) -> Result<EnumerationResult, OracleError> {
    require_decoupled(spec)?;
    lattice.check()?;
    if spec.m > ENUM_MAX_MODES || grid.steps > ENUM_MAX_STEPS {
        return Err(OracleError::TooLarge(format!(
            "m = {}, K = {} (limits m <= {ENUM_MAX_MODES}, K <= {ENUM_MAX_STEPS})",
            spec.m, grid.steps
        )));
    }
    let (z, wq) = gauss_hermite(lattice.quadrature_order);
    if lattice.quadrature_order > 9 {
        return Err(OracleError::TooLarge(format!(
            "quadrature order {} (limit 9)",
            lattice.quadrature_order
        )));
    }
    let mut tree = Tree {
        spec,
        lattice,
        grid,
        z,
        wq,
        evaluated: 0,
    };
    let (left, w) = lattice.segment(x);
    let mut values = Vec::with_capacity(spec.m);
    let mut first_moves = Vec::with_capacity(spec.m);
    for i in 0..spec.m {
        let (vl, cl) = tree.best(0, left, i)?;
        let (vr, cr) = tree.best(0, left + 1, i)?;
        values.push((1.0 - w) * vl + w * vr);
        first_moves.push(if w < 0.5 { cl } else { cr });
    }
    Ok(EnumerationResult {
        values,
        first_moves,
        evaluated: tree.evaluated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Payoff {
    pub mean: f64,
    pub std_err: f64,
    pub n_paths: usize,
}

/// Runs a feedback policy along every path: at each `t_k` the policy maps
/// `(k, t, x, mode)` to the mode to hold over `[t_k, t_{k+1})`, paying
/// `g(mode, new)` on a change. Collects `dt f_a - costs + h_{a_T}`.
pub fn evaluate_policy<P>(
    spec: &ProblemSpec,
    bundle: &PathBundle,
    start: usize,
    policy: P,
) -> Result<Payoff, OracleError>
where
    P: Fn(usize, f64, &[f64], usize) -> usize + Sync,
{
    require_decoupled(spec)?;
    if start >= spec.m {
        return Err(OracleError::Mismatch(format!("start mode {} out of range", start + 1)));
    }
    let grid = bundle.grid;
    let dt = grid.dt();
    let m = spec.m;
    let payoffs = par::map_indices(bundle.n_paths, |p| -> Result<f64, OracleError> {
        let mut mode = start;
        let mut total = 0.0;
        let mut g = vec![0.0; m * m];
        for k in 0..grid.steps {
            let t = grid.time(k);
            let x = bundle.state(p, k);
            let dom = |source| OracleError::Domain { t, x: x[0], source };
            let next = policy(k, t, x, mode);
            if next != mode {
                spec.cost_matrix(t, x, &mut g).map_err(dom)?;
                total -= g[mode * m + next];
                mode = next;
            }
            total += dt * spec.driver(mode, &Env::new(t, x)).map_err(dom)?;
        }
        let xt = bundle.state(p, grid.steps);
        total += spec.terminal(mode, xt).map_err(|source| OracleError::Domain {
            t: grid.horizon,
            x: xt[0],
            source,
        })?;
        Ok(total)
    });
    let payoffs = payoffs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let n = payoffs.len() as f64;
    let partial = par::map_chunks(payoffs.len(), |r| payoffs[r].iter().sum::<f64>());
    let mean = partial.iter().sum::<f64>() / n;
    let partial = par::map_chunks(payoffs.len(), |r| {
        payoffs[r].iter().map(|v| (v - mean).powi(2)).sum::<f64>()
    });
    let var = if payoffs.len() > 1 {
        partial.iter().sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(Payoff {
        mean,
        std_err: (var / n).sqrt(),
        n_paths: payoffs.len(),
    })
}

/// Follows the DP action table (nearest node; chained switches at one
/// time are followed until the table says continue).
pub fn evaluate_strategy(
    spec: &ProblemSpec,
    value: &SwitchingValue,
    bundle: &PathBundle,
    start: usize,
) -> Result<Payoff, OracleError> {
    if value.grid != bundle.grid {
        return Err(OracleError::Mismatch(
            "value and bundle use different time grids".into(),
        ));
    }
    if value.m != spec.m {
        return Err(OracleError::Mismatch(
            "value and problem have different mode counts".into(),
        ));
    }
    evaluate_policy(spec, bundle, start, |k, _, x, mode| {
        let mut mode = mode;
        for _ in 0..value.m {
            match value.action(k, mode, x[0]) {
                0 => break,
                j => mode = j - 1,
            }
        }
        mode
    })
}
