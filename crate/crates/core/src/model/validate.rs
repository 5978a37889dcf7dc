//! Sampling-based checks of the standing assumptions on a problem.
//!
//! Each check runs over a user-declared grid and reports the worst value of
//! a signed violation that must stay at or below `tolerance`. Results are
//! "checked on grid", never proofs.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ProblemSpec;
use crate::expr::{default_step, finite_diff, finite_diff_mixed, finite_diff_with, Env, Stencil, Symbol};
use crate::ModelError;

pub const NO_FREE_LOOP: &str = "A2a-no-free-loop";
pub const CONSISTENCY: &str = "A3b-consistency";
pub const RHO: &str = "A2b-rho";
pub const ELLIPTICITY: &str = "E2-ellipticity";
pub const LIPSCHITZ: &str = "E1-A1-lipschitz";

/// Strictness margin for the triangle inequality on switching costs.
pub const LOOP_MARGIN: f64 = 1e-9;
pub const DEFAULT_TOL_RHO: f64 = 1e-6;
pub const DEFAULT_HALF_WIDTH: f64 = 5.0;
pub const DEFAULT_POINTS_PER_AXIS: usize = 11;
/// An estimate growing by more than this factor when the sampling box is
/// widened fourfold is flagged as non-Lipschitz.
pub const LIPSCHITZ_GROWTH_TOL: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub t: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    pub description: String,
    pub points: Vec<GridPoint>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|k| {
            if k == n - 1 {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (n - 1) as f64
            }
        })
        .collect()
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect()
    })
}

impl SampleGrid {
    /// Tensor grid on `[t0, t1] × [-half_width, half_width]^d`.
    pub fn tensor(t0: f64, t1: f64, d: usize, half_width: f64, per_axis: usize) -> SampleGrid {
        let times = linspace(t0, t1, per_axis);
        let xs = cartesian(&vec![linspace(-half_width, half_width, per_axis); d]);
        let points = times
            .iter()
            .flat_map(|&t| xs.iter().map(move |x| GridPoint { t, x: x.clone() }))
            .collect();
        SampleGrid {
            description: format!(
                "tensor {per_axis}^{} on [{t0}, {t1}] x [-{half_width}, {half_width}]^{d}",
                d + 1
            ),
            points,
        }
    }

    /// The default validation grid for `spec`.
    pub fn default_for(spec: &ProblemSpec, half_width: f64) -> SampleGrid {
        Self::tensor(0.0, spec.horizon, spec.d, half_width, DEFAULT_POINTS_PER_AXIS)
    }

    /// States only, placed at the terminal time.
    pub fn terminal(spec: &ProblemSpec, half_width: f64, per_axis: usize) -> SampleGrid {
        let xs = cartesian(&vec![linspace(-half_width, half_width, per_axis); spec.d]);
        SampleGrid {
            description: format!(
                "tensor {per_axis}^{} at t = T on [-{half_width}, {half_width}]^{}",
                spec.d, spec.d
            ),
            points: xs.into_iter().map(|x| GridPoint { t: spec.horizon, x }).collect(),
        }
    }

    pub fn from_points(description: impl Into<String>, points: Vec<GridPoint>) -> SampleGrid {
        SampleGrid {
            description: description.into(),
            points,
        }
    }
}

/// Sample point at which a check failed (or came closest to failing).
/// Mode indices are one-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    pub x: Vec<f64>,
    pub i: Option<usize>,
    pub j: Option<usize>,
    pub l: Option<usize>,
    /// The offending quantity in its natural units (cost excess, eigenvalue,
    /// rho value, ...).
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub assumption: String,
    pub pass: bool,
    pub worst: f64,
    pub witness: Option<Witness>,
    pub tolerance: f64,
    pub grid: String,
    /// Advisory reports cannot certify the assumption and do not gate exit
    /// codes.
    pub advisory: bool,
}

struct Worst {
    value: f64,
    witness: Option<Witness>,
}

impl Worst {
    fn new() -> Self {
        Worst {
            value: f64::NEG_INFINITY,
            witness: None,
        }
    }

    fn offer(&mut self, value: f64, witness: impl FnOnce() -> Witness) {
        if value > self.value {
            self.value = value;
            self.witness = Some(witness());
        }
    }

    fn report(self, assumption: &str, grid: &SampleGrid, tolerance: f64) -> ValidationReport {
        let (worst, witness) = if self.value == f64::NEG_INFINITY {
            (0.0, None)
        } else {
            (self.value, self.witness)
        };
        ValidationReport {
            assumption: assumption.to_string(),
            pass: worst <= tolerance,
            worst,
            witness,
            tolerance,
            grid: grid.description.clone(),
            advisory: false,
        }
    }
}

fn nonempty(grid: &SampleGrid) -> Result<(), ModelError> {
    if grid.points.is_empty() {
        Err(ModelError::EmptyGrid)
    } else {
        Ok(())
    }
}

fn cost(spec: &ProblemSpec, i: usize, j: usize, t: f64, x: &[f64]) -> Result<f64, ModelError> {
    Ok(spec.cost(i, j, t, x)?)
}

/// Signed violation of the no-free-loop / cost-sign checks at one point for
/// the triple (i, j, l) (or the pair (i, j) when `l` is `None`).
fn loop_violation(
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    i: usize,
    j: usize,
    l: Option<usize>,
) -> Result<(f64, f64), ModelError> {
    let gij = cost(spec, i, j, t, x)?;
    Ok(match l {
        Some(l) => {
            let excess = gij - cost(spec, i, l, t, x)? - cost(spec, l, j, t, x)?;
            (excess + LOOP_MARGIN, excess)
        }
        None if i == j => (gij.abs(), gij),
        None => (-gij, gij),
    })
}

/// Strict triangle inequality `g_ij < g_il + g_lj` on every triple of
/// distinct modes, plus `g_ij >= 0` and `g_ii = 0`.
pub fn validate_no_free_loop(spec: &ProblemSpec, grid: &SampleGrid) -> Result<ValidationReport, ModelError> {
    nonempty(grid)?;
    let m = spec.m;
    let mut worst = Worst::new();
    for p in &grid.points {
        for i in 0..m {
            for j in 0..m {
                let (v, raw) = loop_violation(spec, p.t, &p.x, i, j, None)?;
                worst.offer(v, || witness(p, Some(i), Some(j), None, raw));
                if i == j {
                    continue;
                }
                for l in (0..m).filter(|&l| l != i && l != j) {
                    let (v, raw) = loop_violation(spec, p.t, &p.x, i, j, Some(l))?;
                    worst.offer(v, || witness(p, Some(i), Some(j), Some(l), raw));
                }
            }
        }
    }
    Ok(worst.report(NO_FREE_LOOP, grid, 0.0))
}

fn witness(p: &GridPoint, i: Option<usize>, j: Option<usize>, l: Option<usize>, value: f64) -> Witness {
    Witness {
        t: p.t,
        x: p.x.clone(),
        i: i.map(|v| v + 1),
        j: j.map(|v| v + 1),
        l: l.map(|v| v + 1),
        value,
    }
}

fn consistency_violation(spec: &ProblemSpec, x: &[f64], i: usize) -> Result<Option<(f64, usize)>, ModelError> {
    let hi = spec.terminal(i, x)?;
    let mut best: Option<(f64, usize)> = None;
    for j in (0..spec.m).filter(|&j| j != i) {
        let v = spec.terminal(j, x)? - cost(spec, i, j, spec.horizon, x)? - hi;
        if best.is_none_or(|(b, _)| v > b) {
            best = Some((v, j));
        }
    }
    Ok(best)
}

/// `h_i(x) >= max_{j != i} (h_j(x) - g_ij(T, x))`. Only the states of the
/// grid are used; costs are evaluated at the horizon.
pub fn validate_consistency(spec: &ProblemSpec, grid: &SampleGrid) -> Result<ValidationReport, ModelError> {
    nonempty(grid)?;
    let mut worst = Worst::new();
    for p in &grid.points {
        for i in 0..spec.m {
            if let Some((v, j)) = consistency_violation(spec, &p.x, i)? {
                worst.offer(v, || Witness {
                    t: spec.horizon,
                    x: p.x.clone(),
                    i: Some(i + 1),
                    j: Some(j + 1),
                    l: None,
                    value: v,
                });
            }
        }
    }
    Ok(worst.report(CONSISTENCY, grid, 0.0))
}

fn time_stencil(t: f64, h: f64, horizon: f64) -> Stencil {
    if t - h < 0.0 {
        Stencil::Forward
    } else if t + h > horizon {
        Stencil::Backward
    } else {
        Stencil::Central
    }
}

/// Step for second derivatives in x: `1e-4 * max(1, |x|)`.
fn second_order_step(c: f64) -> f64 {
    1e-4 * c.abs().max(1.0)
}

/// `rho_ij = d_t g_ij + L_X g_ij` by finite differences, where `L_X` is the
/// generator `1/2 tr(sigma sigma^T D^2) + b . grad`.
pub fn rho(spec: &ProblemSpec, i: usize, j: usize, t: f64, x: &[f64]) -> Result<f64, ModelError> {
    let d = spec.d;
    let e = &spec.g[i][j];
    let env = Env::new(t, x);
    let ht = default_step(t);
    let mut value = finite_diff_with(e, Symbol::T, &env, 1, ht, time_stencil(t, ht, spec.horizon))?;

    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * d];
    spec.drift(t, x, &mut b)?;
    spec.diffusion(t, x, &mut s)?;
    for k in 0..d {
        value += b[k] * finite_diff(e, Symbol::X(k), &env, 1, default_step(x[k]))?;
        for l in 0..d {
            let a_kl: f64 = (0..d).map(|r| s[k * d + r] * s[l * d + r]).sum();
            if a_kl == 0.0 {
                continue;
            }
            let second = finite_diff_mixed(
                e,
                Symbol::X(k),
                Symbol::X(l),
                &env,
                second_order_step(x[k]),
                second_order_step(x[l]),
            )?;
            value += 0.5 * a_kl * second;
        }
    }
    Ok(value)
}

/// `rho_ij <= tol` on the grid, for every ordered pair.
pub fn validate_rho(spec: &ProblemSpec, grid: &SampleGrid, tol: f64) -> Result<ValidationReport, ModelError> {
    nonempty(grid)?;
    let mut worst = Worst::new();
    for p in &grid.points {
        for i in 0..spec.m {
            for j in 0..spec.m {
                let v = rho(spec, i, j, p.t, &p.x)?;
                worst.offer(v, || witness(p, Some(i), Some(j), None, v));
            }
        }
    }
    Ok(worst.report(RHO, grid, tol))
}

/// Eigenvalues of sigma sigma^T at (t, x), ascending.
pub fn diffusion_eigenvalues(spec: &ProblemSpec, t: f64, x: &[f64]) -> Result<Vec<f64>, ModelError> {
    let d = spec.d;
    let mut s = vec![0.0; d * d];
    spec.diffusion(t, x, &mut s)?;
    if let Some(pos) = s.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteEntry {
            what: format!("sigma{}{}", pos / d + 1, pos % d + 1),
            t,
            x: x.to_vec(),
        });
    }
    let sigma = DMatrix::from_row_slice(d, d, &s);
    let a = &sigma * sigma.transpose();
    let mut eig: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

fn ellipticity_violation(eig: &[f64], theta: f64) -> (f64, f64) {
    let lo = eig[0];
    let hi = eig[eig.len() - 1];
    let over = hi - theta;
    let under = 1.0 / theta - lo;
    if over >= under {
        (over, hi)
    } else {
        (under, lo)
    }
}

/// Eigenvalues of sigma sigma^T must lie in `[1/theta, theta]`.
pub fn validate_ellipticity(spec: &ProblemSpec, grid: &SampleGrid, theta: f64) -> Result<ValidationReport, ModelError> {
    assert!(theta > 0.0, "theta must be positive");
    nonempty(grid)?;
    let mut worst = Worst::new();
    for p in &grid.points {
        let eig = diffusion_eigenvalues(spec, p.t, &p.x)?;
        let (v, eigenvalue) = ellipticity_violation(&eig, theta);
        worst.offer(v, || witness(p, None, None, None, eigenvalue));
    }
    let mut report = worst.report(ELLIPTICITY, grid, 0.0);
    report.grid = format!("{} (theta = {theta})", report.grid);
    Ok(report)
}

/// Random pairs of nearby points for difference quotients.
///
/// Base points are uniform in a box of half-width `x_radius` in x and
/// `yz_radius` in (y, z); partners are displaced by at most `offset` per
/// coordinate.
#[derive(Debug, Clone)]
pub struct PairSampler {
    pub seed: u64,
    pub x_radius: f64,
    pub yz_radius: f64,
    pub offset: f64,
}

impl PairSampler {
    pub fn new(seed: u64, radius: f64) -> Self {
        PairSampler {
            seed,
            x_radius: radius,
            yz_radius: radius,
            offset: 1e-3,
        }
    }

    fn widened(&self, factor: f64) -> PairSampler {
        PairSampler {
            seed: self.seed.wrapping_add(1),
            x_radius: self.x_radius * factor,
            yz_radius: self.yz_radius * factor,
            offset: self.offset,
        }
    }
}

/// Difference-quotient estimates (lower bounds on Lipschitz constants).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    /// `(|b - b'| + |sigma - sigma'|) / |x - x'|` at the base radius and at
    /// four times the radius.
    pub drift_diffusion: [f64; 2],
    /// `|f_i - f_i'| / (|y - y'| + |z - z'|)`, same two radii, per driver.
    pub drivers: Vec<[f64; 2]>,
    pub n_pairs: usize,
    /// Base point achieving the largest wide-box quotient.
    pub witness: Option<Witness>,
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|a| a * a).sum::<f64>().sqrt()
}

struct Quotients {
    drift_diffusion: f64,
    drivers: Vec<f64>,
    witness: Option<Witness>,
    best: f64,
}

fn sample_quotients(spec: &ProblemSpec, sampler: &PairSampler, n_pairs: usize) -> Result<Quotients, ModelError> {
    let (d, m) = (spec.d, spec.m);
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let mut q = Quotients {
        drift_diffusion: 0.0,
        drivers: vec![0.0; m],
        witness: None,
        best: f64::NEG_INFINITY,
    };
    let (mut b1, mut b2) = (vec![0.0; d], vec![0.0; d]);
    let (mut s1, mut s2) = (vec![0.0; d * d], vec![0.0; d * d]);
    for _ in 0..n_pairs {
        let t = rng.random_range(0.0..=spec.horizon);
        let x1: Vec<f64> = (0..d)
            .map(|_| rng.random_range(-sampler.x_radius..=sampler.x_radius))
            .collect();
        let x2: Vec<f64> = x1
            .iter()
            .map(|v| v + rng.random_range(-sampler.offset..=sampler.offset))
            .collect();
        let dx = norm(x1.iter().zip(&x2).map(|(a, b)| a - b));
        if dx > 0.0 {
            spec.drift(t, &x1, &mut b1)?;
            spec.drift(t, &x2, &mut b2)?;
            spec.diffusion(t, &x1, &mut s1)?;
            spec.diffusion(t, &x2, &mut s2)?;
            let num = norm(b1.iter().zip(&b2).map(|(a, b)| a - b)) + norm(s1.iter().zip(&s2).map(|(a, b)| a - b));
            let ratio = num / dx;
            if ratio > q.drift_diffusion {
                q.drift_diffusion = ratio;
            }
            if ratio > q.best {
                q.best = ratio;
                q.witness = Some(Witness {
                    t,
                    x: x1.clone(),
                    i: None,
                    j: None,
                    l: None,
                    value: ratio,
                });
            }
        }

        let y1: Vec<f64> = (0..m)
            .map(|_| rng.random_range(-sampler.yz_radius..=sampler.yz_radius))
            .collect();
        let z1: Vec<f64> = (0..m * d)
            .map(|_| rng.random_range(-sampler.yz_radius..=sampler.yz_radius))
            .collect();
        let y2: Vec<f64> = y1
            .iter()
            .map(|v| v + rng.random_range(-sampler.offset..=sampler.offset))
            .collect();
        let z2: Vec<f64> = z1
            .iter()
            .map(|v| v + rng.random_range(-sampler.offset..=sampler.offset))
            .collect();
        let dyz = norm(y1.iter().zip(&y2).map(|(a, b)| a - b)) + norm(z1.iter().zip(&z2).map(|(a, b)| a - b));
        if dyz == 0.0 {
            continue;
        }
        let e1 = Env::new(t, &x1).with_y(&y1).with_z(&z1, d);
        let e2 = Env::new(t, &x1).with_y(&y2).with_z(&z2, d);
        for i in 0..m {
            let ratio = (spec.driver(i, &e1)? - spec.driver(i, &e2)?).abs() / dyz;
            if ratio > q.drivers[i] {
                q.drivers[i] = ratio;
            }
            if ratio > q.best {
                q.best = ratio;
                q.witness = Some(Witness {
                    t,
                    x: x1.clone(),
                    i: Some(i + 1),
                    j: None,
                    l: None,
                    value: ratio,
                });
            }
        }
    }
    Ok(q)
}

/// Largest observed difference quotients of (b, sigma) in x and of each f_i
/// in (y, z). This is a statistical lower estimate; it can refute a
/// Lipschitz claim (quotients that keep growing as the box widens) but
/// never certify one.
pub fn estimate_lipschitz(
    spec: &ProblemSpec,
    sampler: &PairSampler,
    n_pairs: usize,
) -> Result<LipschitzEstimate, ModelError> {
    assert!(n_pairs >= 1, "need at least one pair");
    let near = sample_quotients(spec, sampler, n_pairs)?;
    let far = sample_quotients(spec, &sampler.widened(4.0), n_pairs)?;
    Ok(LipschitzEstimate {
        drift_diffusion: [near.drift_diffusion, far.drift_diffusion],
        drivers: near.drivers.iter().zip(&far.drivers).map(|(a, b)| [*a, *b]).collect(),
        n_pairs,
        witness: far.witness,
    })
}

fn growth([near, far]: [f64; 2]) -> f64 {
    if far <= 1e-12 {
        1.0
    } else {
        far / near.max(1e-12)
    }
}

impl LipschitzEstimate {
    /// Largest quotient over all coefficients at the wide radius.
    pub fn max_estimate(&self) -> f64 {
        self.drivers
            .iter()
            .map(|q| q[1])
            .fold(self.drift_diffusion[1], f64::max)
    }

    /// Worst growth factor of the estimate when the box widens fourfold.
    pub fn growth(&self) -> f64 {
        self.drivers
            .iter()
            .map(|q| growth(*q))
            .fold(growth(self.drift_diffusion), f64::max)
    }

    pub fn flagged_non_lipschitz(&self) -> bool {
        self.growth() > LIPSCHITZ_GROWTH_TOL
    }

    pub fn report(&self, sampler: &PairSampler) -> ValidationReport {
        let worst = self.growth();
        ValidationReport {
            assumption: LIPSCHITZ.to_string(),
            pass: worst <= LIPSCHITZ_GROWTH_TOL,
            worst,
            witness: self.witness.clone(),
            tolerance: LIPSCHITZ_GROWTH_TOL,
            grid: format!(
                "{} random pairs, radius {} and {} (seed {})",
                self.n_pairs,
                sampler.x_radius,
                4.0 * sampler.x_radius,
                sampler.seed
            ),
            advisory: true,
        }
    }
}

pub const DEFAULT_THETA: f64 = 2.0;

/// Grid, tolerances and sampler for [`validate_all`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationSettings {
    pub half_width: f64,
    pub points_per_axis: usize,
    pub tol_rho: f64,
    pub theta: f64,
    pub lipschitz_pairs: usize,
    pub lipschitz_radius: f64,
    pub seed: u64,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        ValidationSettings {
            half_width: DEFAULT_HALF_WIDTH,
            points_per_axis: DEFAULT_POINTS_PER_AXIS,
            tol_rho: DEFAULT_TOL_RHO,
            theta: DEFAULT_THETA,
            lipschitz_pairs: 2000,
            lipschitz_radius: 3.0,
            seed: 0,
        }
    }
}

/// No-free-loop, consistency, rho, ellipticity, then the advisory
/// Lipschitz estimate, all on one tensor grid.
pub fn validate_all(spec: &ProblemSpec, settings: &ValidationSettings) -> Result<Vec<ValidationReport>, ModelError> {
    let grid = SampleGrid::tensor(0.0, spec.horizon, spec.d, settings.half_width, settings.points_per_axis);
    let sampler = PairSampler::new(settings.seed, settings.lipschitz_radius);
    Ok(vec![
        validate_no_free_loop(spec, &grid)?,
        validate_consistency(spec, &grid)?,
        validate_rho(spec, &grid, settings.tol_rho)?,
        validate_ellipticity(spec, &grid, settings.theta)?,
        estimate_lipschitz(spec, &sampler, settings.lipschitz_pairs)?.report(&sampler),
    ])
}

/// Re-evaluates the signed violation at a report's witness, independently
/// of the grid sweep. Returns `None` for advisory reports or reports
/// without a witness.
pub fn recheck(spec: &ProblemSpec, report: &ValidationReport, theta: f64) -> Result<Option<f64>, ModelError> {
    let Some(w) = &report.witness else {
        return Ok(None);
    };
    let idx = |v: Option<usize>| v.map(|k| k - 1);
    let v = match report.assumption.as_str() {
        NO_FREE_LOOP => {
            let (i, j) = (idx(w.i).unwrap_or(0), idx(w.j).unwrap_or(0));
            loop_violation(spec, w.t, &w.x, i, j, idx(w.l))?.0
        }
        CONSISTENCY => {
            let i = idx(w.i).unwrap_or(0);
            let j = idx(w.j).unwrap_or(0);
            spec.terminal(j, &w.x)? - cost(spec, i, j, spec.horizon, &w.x)? - spec.terminal(i, &w.x)?
        }
        RHO => rho(spec, idx(w.i).unwrap_or(0), idx(w.j).unwrap_or(0), w.t, &w.x)?,
        ELLIPTICITY => ellipticity_violation(&diffusion_eigenvalues(spec, w.t, &w.x)?, theta).0,
        _ => return Ok(None),
    };
    Ok(Some(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{catalog, ProblemDoc};

    fn with(mut doc: ProblemDoc, edit: impl FnOnce(&mut ProblemDoc)) -> ProblemSpec {
        edit(&mut doc);
        ProblemSpec::from_doc(&doc).unwrap()
    }

    fn base(m: usize) -> ProblemDoc {
        let mut doc = catalog::doc(catalog::REMARK_PHI).unwrap();
        doc.m = m;
        doc.f = vec!["0".into(); m];
        doc.h = vec!["0".into(); m];
        doc.g = (0..m)
            .map(|i| (0..m).map(|j| if i == j { "0".into() } else { "1".into() }).collect())
            .collect();
        doc
    }

    fn phi_costs(m: usize, phi: &str) -> Vec<Vec<String>> {
        (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| {
                        if i == j {
                            "0".to_string()
                        } else {
                            format!("({phi})*{}", i.abs_diff(j))
                        }
                    })
                    .collect()
            })
            .collect()
    }

    fn grid(spec: &ProblemSpec) -> SampleGrid {
        SampleGrid::default_for(spec, DEFAULT_HALF_WIDTH)
    }

    #[test]
    fn no_free_loop_two_modes_is_vacuous() {
        let spec = ProblemSpec::from_doc(&base(2)).unwrap();
        let r = validate_no_free_loop(&spec, &grid(&spec)).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.worst, 0.0);
    }

    #[test]
    fn no_free_loop_constant_violation_has_witness() {
        let spec = with(base(3), |d| {
            d.g[0][2] = "5".into();
        });
        let r = validate_no_free_loop(&spec, &grid(&spec)).unwrap();
        assert!(!r.pass);
        let w = r.witness.clone().unwrap();
        assert_eq!((w.i, w.j, w.l), (Some(1), Some(3), Some(2)));
        assert_eq!(w.value, 3.0);
        assert!((r.worst - 3.0).abs() < 1e-8);
        let again = recheck(&spec, &r, 2.0).unwrap().unwrap();
        assert!((again - r.worst).abs() < 1e-12);
    }

    #[test]
    fn remark_family_with_three_collinear_modes_is_only_weakly_triangular() {
        // g_13 = 2 phi = g_12 + g_23: the strict inequality fails by exactly
        // the margin, with the collinear triple as witness.
        let spec = with(base(3), |d| d.g = phi_costs(3, "2 - t"));
        let r = validate_no_free_loop(&spec, &grid(&spec)).unwrap();
        assert!(!r.pass);
        let w = r.witness.unwrap();
        assert_eq!((w.i, w.j, w.l), (Some(1), Some(3), Some(2)));
        assert!(w.value.abs() < 1e-12);
    }

    #[test]
    fn negative_cost_fails() {
        let spec = with(base(2), |d| d.g[0][1] = "t - 0.5".into());
        let r = validate_no_free_loop(&spec, &grid(&spec)).unwrap();
        assert!(!r.pass);
        assert!((r.worst - 0.5).abs() < 1e-12);
    }

    #[test]
    fn consistency_examples() {
        let spec = with(base(2), |d| d.h = vec!["x1".into(), "x1".into()]);
        let r = validate_consistency(&spec, &grid(&spec)).unwrap();
        assert!(r.pass);
        assert_eq!(r.worst, -1.0);

        let spec = with(base(2), |d| d.h = vec!["x1".into(), "x1 + 2".into()]);
        let r = validate_consistency(&spec, &grid(&spec)).unwrap();
        assert!(!r.pass);
        assert_eq!(r.witness.as_ref().unwrap().i, Some(1));
        assert!((r.worst - 1.0).abs() < 1e-12);
        assert!((recheck(&spec, &r, 2.0).unwrap().unwrap() - r.worst).abs() < 1e-12);

        let spec = with(base(1), |_| {});
        let r = validate_consistency(&spec, &grid(&spec)).unwrap();
        assert!(r.pass && r.witness.is_none());
    }

    #[test]
    fn rho_examples() {
        let spec = with(base(3), |d| d.g = phi_costs(3, "2 - t"));
        let r = validate_rho(&spec, &grid(&spec), DEFAULT_TOL_RHO).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.worst.abs() < 1e-8, "diagonal rho is 0: {}", r.worst);
        assert!((rho(&spec, 0, 2, 0.5, &[1.0]).unwrap() + 2.0).abs() < 1e-8);
        assert!((rho(&spec, 0, 1, 0.0, &[1.0]).unwrap() + 1.0).abs() < 1e-8);
        assert!((rho(&spec, 0, 1, 1.0, &[1.0]).unwrap() + 1.0).abs() < 1e-8);

        let spec = with(base(3), |d| d.g = phi_costs(3, "1 + t"));
        let r = validate_rho(&spec, &grid(&spec), DEFAULT_TOL_RHO).unwrap();
        assert!(!r.pass);
        assert!((r.worst - 2.0).abs() < 1e-8);
        assert!((recheck(&spec, &r, 2.0).unwrap().unwrap() - r.worst).abs() < 1e-12);

        let spec = with(base(2), |_| {});
        let r = validate_rho(&spec, &grid(&spec), DEFAULT_TOL_RHO).unwrap();
        assert!(r.pass && r.worst == 0.0);
    }

    #[test]
    fn rho_sees_the_generator() {
        // g = x1^2 with sigma = 1, b = 1: rho = 1 + 2 x1.
        let spec = with(base(2), |d| {
            d.b = vec!["1".into()];
            d.g[0][1] = "x1^2".into();
        });
        for x in [-2.0, 0.0, 3.0] {
            let v = rho(&spec, 0, 1, 0.5, &[x]).unwrap();
            assert!((v - (1.0 + 2.0 * x)).abs() < 1e-5, "{x}: {v}");
        }
    }

    #[test]
    fn ellipticity_examples() {
        let spec = with(base(2), |_| {});
        let r = validate_ellipticity(&spec, &grid(&spec), 2.0).unwrap();
        assert!(r.pass);

        let spec = with(base(2), |d| {
            d.d = 2;
            d.b = vec!["0".into(), "0".into()];
            d.sigma = vec![vec!["3".into(), "0".into()], vec!["0".into(), "1".into()]];
        });
        let g = SampleGrid::tensor(0.0, 1.0, 2, 1.0, 3);
        let r = validate_ellipticity(&spec, &g, 2.0).unwrap();
        assert!(!r.pass);
        assert!((r.witness.as_ref().unwrap().value - 9.0).abs() < 1e-12);
        assert!((r.worst - 7.0).abs() < 1e-12);
        assert!((recheck(&spec, &r, 2.0).unwrap().unwrap() - r.worst).abs() < 1e-12);

        let spec = with(base(2), |d| d.sigma = vec![vec!["sqrt(1 + x1^2)".into()]]);
        let g = SampleGrid::tensor(0.0, 1.0, 1, 2.0, 41);
        let r = validate_ellipticity(&spec, &g, 6.0).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn non_finite_diffusion_is_reported() {
        let spec = with(base(2), |d| d.sigma = vec![vec!["exp(x1^2)".into()]]);
        let g = SampleGrid::tensor(0.0, 1.0, 1, 40.0, 3);
        assert!(validate_ellipticity(&spec, &g, 2.0).is_err());
    }

    #[test]
    fn lipschitz_estimates() {
        let spec = with(base(2), |d| d.b = vec!["2*x1".into()]);
        let sampler = PairSampler::new(7, 3.0);
        let small = estimate_lipschitz(&spec, &sampler, 10).unwrap();
        let big = estimate_lipschitz(&spec, &sampler, 2000).unwrap();
        assert!(small.drift_diffusion[1] <= 2.0 + 1e-6);
        assert!(big.drift_diffusion[1] <= 2.0 + 1e-6);
        assert!(big.drift_diffusion[1] > 2.0 - 1e-6);
        assert!(!big.flagged_non_lipschitz());

        let spec = with(base(2), |d| d.f[0] = "sin(y1)".into());
        let est = estimate_lipschitz(&spec, &sampler, 2000).unwrap();
        assert!(est.drivers[0][0] <= 1.0 && est.drivers[0][1] <= 1.0);
        assert!(est.drivers[0][1] > 0.5);

        let spec = with(base(2), |d| d.b = vec!["x1^2".into()]);
        let est = estimate_lipschitz(&spec, &sampler, 2000).unwrap();
        assert!(est.drift_diffusion[1] > 3.0 * est.drift_diffusion[0]);
        assert!(est.flagged_non_lipschitz());
        let r = est.report(&sampler);
        assert!(!r.pass && r.advisory);
    }

    #[test]
    fn validators_are_deterministic() {
        let spec = catalog::get(catalog::REMARK_PHI).unwrap();
        let g = grid(&spec);
        assert_eq!(
            validate_rho(&spec, &g, 1e-6).unwrap(),
            validate_rho(&spec, &g, 1e-6).unwrap()
        );
        let s = PairSampler::new(3, 2.0);
        assert_eq!(
            estimate_lipschitz(&spec, &s, 100).unwrap(),
            estimate_lipschitz(&spec, &s, 100).unwrap()
        );
    }

    #[test]
    fn remark_phi_and_its_mutations() {
        let settings = ValidationSettings::default();
        let reports = validate_all(&catalog::get(catalog::REMARK_PHI).unwrap(), &settings).unwrap();
        assert!(reports.iter().all(|r| r.pass), "{reports:?}");
        for kind in catalog::Mutation::ALL {
            let spec = ProblemSpec::from_doc(&catalog::mutation(kind)).unwrap();
            let reports = validate_all(&spec, &settings).unwrap();
            let failed: Vec<&str> = reports
                .iter()
                .filter(|r| !r.pass)
                .map(|r| r.assumption.as_str())
                .collect();
            assert_eq!(failed, vec![kind.target()], "{kind:?}");
            let r = reports.iter().find(|r| !r.pass).unwrap();
            let again = recheck(&spec, r, settings.theta).unwrap().unwrap();
            assert!((again - r.worst).abs() <= 1e-9 * r.worst.abs().max(1.0));
        }
    }

    #[test]
    fn empty_grid_is_rejected() {
        let spec = catalog::get(catalog::CONST).unwrap();
        let g = SampleGrid::from_points("empty", vec![]);
        assert!(matches!(validate_rho(&spec, &g, 1e-6), Err(ModelError::EmptyGrid)));
    }
}
