//! Least-squares conditional expectations `E[target | X_{t_k}]` on a finite
//! basis of the state.
//!
//! The normal equations are accumulated over fixed row chunks and folded
//! in chunk order, then solved by Cholesky. When the normal matrix is
//! ill-conditioned (condition number above [`MAX_CONDITION`]) the solve is
//! retried with a ridge term scaled by `trace / B`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

pub const MAX_CONDITION: f64 = 1e12;
/// Ridge escalation ladder, as multiples of `trace(G) / B`.
pub const RIDGE_LADDER: [f64; 3] = [1e-10, 1e-8, 1e-6];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegressError {
    #[error("no regression samples")]
    EmptyInput,
    #[error("state array has {len} values, not a multiple of d = {d}")]
    Shape { len: usize, d: usize },
    #[error("{targets} targets for {rows} samples")]
    TargetLength { targets: usize, rows: usize },
    #[error("design is degenerate: no ridge level produced a finite solve (condition {condition:e})")]
    DegenerateDesign { condition: f64 },
    #[error("non-finite regression target at row {0}")]
    NonFiniteTarget(usize),
}

/// User-level basis description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BasisSpec {
    /// All monomials of total degree at most `degree` in the (optionally
    /// standardized) coordinates.
    Polynomial {
        degree: usize,
        #[serde(default = "yes")]
        standardize: bool,
    },
    /// Indicators of a regular grid of cells on `[lower, upper]`; states
    /// outside the box fall into the nearest cell.
    Hypercube {
        bins: Vec<usize>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

fn yes() -> bool {
    true
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec::Polynomial {
            degree: 3,
            standardize: true,
        }
    }
}

/// A basis with its scaling frozen from the regression sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FrozenBasis {
    Polynomial {
        degree: usize,
        mean: Vec<f64>,
        scale: Vec<f64>,
        /// Exponent vectors, one per feature.
        exponents: Vec<Vec<u32>>,
    },
    Hypercube {
        bins: Vec<usize>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

/// Multi-indices of total degree `<= degree` over the `active` axes, graded
/// and, within a degree, with earlier axes carrying higher powers first.
fn monomials(d: usize, degree: usize, active: &[bool]) -> Vec<Vec<u32>> {
    fn fill(axis: usize, left: u32, cur: &mut Vec<u32>, active: &[bool], out: &mut Vec<Vec<u32>>) {
        if axis == cur.len() {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        let top = if active[axis] { left } else { 0 };
        for p in (0..=top).rev() {
            cur[axis] = p;
            fill(axis + 1, left - p, cur, active, out);
        }
        cur[axis] = 0;
    }
    let mut out = Vec::new();
    let mut cur = vec![0; d];
    for deg in 0..=degree as u32 {
        fill(0, deg, &mut cur, active, &mut out);
    }
    out
}

impl BasisSpec {
    /// Freezes standardization from `states` (`N × d`, row-major).
    pub fn freeze(&self, states: &[f64], d: usize) -> Result<FrozenBasis, RegressError> {
        if d == 0 || !states.len().is_multiple_of(d) {
            return Err(RegressError::Shape { len: states.len(), d });
        }
        let n = states.len() / d;
        if n == 0 {
            return Err(RegressError::EmptyInput);
        }
        Ok(match self {
            BasisSpec::Polynomial { degree, standardize } => {
                let (mean, scale) = if *standardize {
                    let mut mean = vec![0.0; d];
                    let mut var = vec![0.0; d];
                    for row in states.chunks_exact(d) {
                        for (m, v) in mean.iter_mut().zip(row) {
                            *m += v;
                        }
                    }
                    mean.iter_mut().for_each(|m| *m /= n as f64);
                    for row in states.chunks_exact(d) {
                        for l in 0..d {
                            var[l] += (row[l] - mean[l]).powi(2);
                        }
                    }
                    let scale = var.iter().map(|v| (v / n as f64).sqrt()).collect();
                    (mean, scale)
                } else {
                    (vec![0.0; d], vec![1.0; d])
                };
                // A coordinate with no spread carries no information.
                let active: Vec<bool> = scale
                    .iter()
                    .zip(&mean)
                    .map(|(s, m): (&f64, &f64)| *s > 1e-12 * m.abs().max(1.0))
                    .collect();
                FrozenBasis::Polynomial {
                    degree: *degree,
                    exponents: monomials(d, *degree, &active),
                    mean,
                    scale,
                }
            }
            BasisSpec::Hypercube { bins, lower, upper } => {
                if bins.len() != d || lower.len() != d || upper.len() != d {
                    return Err(RegressError::Shape { len: bins.len(), d });
                }
                FrozenBasis::Hypercube {
                    bins: bins.iter().map(|b| (*b).max(1)).collect(),
                    lower: lower.clone(),
                    upper: upper.clone(),
                }
            }
        })
    }
}

impl FrozenBasis {
    pub fn size(&self) -> usize {
        match self {
            FrozenBasis::Polynomial { exponents, .. } => exponents.len(),
            FrozenBasis::Hypercube { bins, .. } => bins.iter().product(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FrozenBasis::Polynomial { mean, .. } => mean.len(),
            FrozenBasis::Hypercube { bins, .. } => bins.len(),
        }
    }

    /// Writes the features of one state into `out` (length [`Self::size`]).
    pub fn features(&self, state: &[f64], out: &mut [f64]) {
        match self {
            FrozenBasis::Polynomial {
                degree,
                mean,
                scale,
                exponents,
            } => {
                let d = mean.len();
                let p = degree + 1;
                // powers[l * p + e] = u_l^e
                let mut powers = [0.0f64; 64];
                let mut heap;
                let powers: &mut [f64] = if d * p <= 64 {
                    &mut powers[..d * p]
                } else {
                    heap = vec![0.0; d * p];
                    &mut heap
                };
                for l in 0..d {
                    let u = if scale[l] > 1e-12 * mean[l].abs().max(1.0) {
                        (state[l] - mean[l]) / scale[l]
                    } else {
                        0.0
                    };
                    powers[l * p] = 1.0;
                    for e in 1..p {
                        powers[l * p + e] = powers[l * p + e - 1] * u;
                    }
                }
                for (o, ex) in out.iter_mut().zip(exponents) {
                    *o = ex
                        .iter()
                        .enumerate()
                        .map(|(l, &e)| powers[l * p + e as usize])
                        .product();
                }
            }
            FrozenBasis::Hypercube { bins, lower, upper } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                out[self.cell(state, bins, lower, upper)] = 1.0;
            }
        }
    }

    fn cell(&self, state: &[f64], bins: &[usize], lower: &[f64], upper: &[f64]) -> usize {
        let mut index = 0;
        for l in 0..bins.len() {
            let width = upper[l] - lower[l];
            let raw = if width > 0.0 {
                ((state[l] - lower[l]) / width * bins[l] as f64).floor()
            } else {
                0.0
            };
            let b = if raw.is_nan() {
                0
            } else {
                raw.clamp(0.0, (bins[l] - 1) as f64) as usize
            };
            index = index * bins[l] + b;
        }
        index
    }
}

/// Row-major `rows × cols` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DesignMatrix {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Features of every state (`N × d`, row-major).
pub fn design_matrix(basis: &FrozenBasis, states: &[f64]) -> Result<DesignMatrix, RegressError> {
    let d = basis.dim();
    if !states.len().is_multiple_of(d) {
        return Err(RegressError::Shape { len: states.len(), d });
    }
    let rows = states.len() / d;
    if rows == 0 {
        return Err(RegressError::EmptyInput);
    }
    let cols = basis.size();
    let mut data = vec![0.0; rows * cols];
    par::for_each_chunk_mut(&mut data, par::CHUNK * cols, |c, chunk| {
        let first = c * par::CHUNK;
        for (r, out) in chunk.chunks_exact_mut(cols).enumerate() {
            let at = (first + r) * d;
            basis.features(&states[at..at + d], out);
        }
    });
    Ok(DesignMatrix { rows, cols, data })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub basis: FrozenBasis,
    pub coefficients: Vec<f64>,
    /// Ridge level actually used (absolute, added to the normal matrix
    /// diagonal).
    pub lambda: f64,
    /// Condition number of the (ridged) normal matrix.
    pub condition: f64,
    pub residual_rms: f64,
}

/// Affine in the features of `state`.
pub fn predict(fit: &RegressionFit, state: &[f64]) -> f64 {
    let mut phi = vec![0.0; fit.coefficients.len()];
    fit.basis.features(state, &mut phi);
    phi.iter().zip(&fit.coefficients).map(|(a, b)| a * b).sum()
}

fn condition(g: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(g.clone()).eigenvalues;
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if lo <= 0.0 || !lo.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// A factorized normal matrix for one design, reusable across targets.
pub struct Projector {
    basis: FrozenBasis,
    design: DesignMatrix,
    factor: Cholesky<f64, Dyn>,
    lambda: f64,
    condition: f64,
}

impl Projector {
    /// Builds the design for `states` and factorizes `Phi^T Phi + lambda I`.
    /// With `lambda == 0` and a condition number above [`MAX_CONDITION`],
    /// ridge levels from [`RIDGE_LADDER`] are tried in order.
    pub fn new(basis: FrozenBasis, states: &[f64], lambda: f64) -> Result<Projector, RegressError> {
        assert!(lambda >= 0.0, "ridge must be non-negative");
        let design = design_matrix(&basis, states)?;
        let b = design.cols;
        let partials = par::map_chunks(design.rows, |range| {
            let mut g = vec![0.0; b * b];
            for r in range {
                let row = design.row(r);
                for i in 0..b {
                    let ri = row[i];
                    if ri == 0.0 {
                        continue;
                    }
                    for j in i..b {
                        g[i * b + j] += ri * row[j];
                    }
                }
            }
            g
        });
        let mut g = vec![0.0; b * b];
        for part in &partials {
            for (a, v) in g.iter_mut().zip(part) {
                *a += v;
            }
        }
        let mut gram = DMatrix::from_fn(b, b, |i, j| if i <= j { g[i * b + j] } else { g[j * b + i] });

        let trace_scale = gram.trace() / b as f64;
        let mut candidates = vec![lambda];
        if lambda == 0.0 {
            candidates.extend(RIDGE_LADDER.iter().map(|s| s * trace_scale));
        }
        let mut last_condition = f64::INFINITY;
        let mut fallback = None;
        for (attempt, &lam) in candidates.iter().enumerate() {
            let mut ridged = gram.clone();
            for i in 0..b {
                ridged[(i, i)] += lam;
            }
            let cond = condition(&ridged);
            last_condition = cond;
            if let Some(factor) = Cholesky::new(ridged) {
                let acceptable = cond <= MAX_CONDITION || attempt + 1 == candidates.len() || lambda > 0.0;
                if acceptable {
                    return Ok(Projector {
                        basis,
                        design,
                        factor,
                        lambda: lam,
                        condition: cond,
                    });
                }
                if fallback.is_none() {
                    fallback = Some((factor, lam, cond));
                }
            }
        }
        if let Some((factor, lam, cond)) = fallback {
            return Ok(Projector {
                basis,
                design,
                factor,
                lambda: lam,
                condition: cond,
            });
        }
        gram.fill(0.0);
        Err(RegressError::DegenerateDesign {
            condition: last_condition,
        })
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn basis(&self) -> &FrozenBasis {
        &self.basis
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Least-squares coefficients for each target column.
    pub fn coefficients(&self, targets: &[&[f64]]) -> Result<Vec<Vec<f64>>, RegressError> {
        let (rows, b) = (self.design.rows, self.design.cols);
        for t in targets {
            if t.len() != rows {
                return Err(RegressError::TargetLength { targets: t.len(), rows });
            }
        }
        let r = targets.len();
        let partials = par::map_chunks(rows, |range| {
            let mut acc = vec![0.0; b * r];
            for row in range {
                let phi = self.design.row(row);
                for (c, t) in targets.iter().enumerate() {
                    let y = t[row];
                    for i in 0..b {
                        acc[c * b + i] += phi[i] * y;
                    }
                }
            }
            acc
        });
        let mut rhs = vec![0.0; b * r];
        for part in &partials {
            for (a, v) in rhs.iter_mut().zip(part) {
                *a += v;
            }
        }
        let mut out = Vec::with_capacity(r);
        for (c, t) in targets.iter().enumerate() {
            let v = DVector::from_column_slice(&rhs[c * b..(c + 1) * b]);
            let sol = self.factor.solve(&v);
            if sol.iter().any(|s| !s.is_finite()) {
                if let Some(bad) = t.iter().position(|v| !v.is_finite()) {
                    return Err(RegressError::NonFiniteTarget(bad));
                }
                return Err(RegressError::DegenerateDesign {
                    condition: self.condition,
                });
            }
            out.push(sol.iter().copied().collect());
        }
        Ok(out)
    }

    /// `Phi c` for every sample row.
    pub fn fitted(&self, coefficients: &[f64]) -> Vec<f64> {
        let b = self.design.cols;
        let mut out = vec![0.0; self.design.rows];
        par::for_each_chunk_mut(&mut out, par::CHUNK, |c, chunk| {
            let first = c * par::CHUNK;
            for (r, o) in chunk.iter_mut().enumerate() {
                let phi = &self.design.data[(first + r) * b..(first + r + 1) * b];
                *o = phi.iter().zip(coefficients).map(|(a, b)| a * b).sum();
            }
        });
        out
    }

    /// Wraps coefficients for `target` into a serializable fit.
    pub fn fit_record(&self, coefficients: Vec<f64>, target: &[f64]) -> RegressionFit {
        let fitted = self.fitted(&coefficients);
        let sse: f64 = par::map_chunks(fitted.len(), |range| {
            range.map(|r| (target[r] - fitted[r]).powi(2)).sum::<f64>()
        })
        .iter()
        .sum();
        RegressionFit {
            basis: self.basis.clone(),
            coefficients,
            lambda: self.lambda,
            condition: self.condition,
            residual_rms: (sse / fitted.len() as f64).sqrt(),
        }
    }
}

/// Minimizes `sum (target - phi . c)^2 + lambda |c|^2` over the basis frozen
/// on `states`.
pub fn fit_conditional_expectation(
    basis: &BasisSpec,
    states: &[f64],
    d: usize,
    targets: &[f64],
    lambda: f64,
) -> Result<RegressionFit, RegressError> {
    let frozen = basis.freeze(states, d)?;
    let projector = Projector::new(frozen, states, lambda)?;
    let coef = projector.coefficients(&[targets])?.remove(0);
    Ok(projector.fit_record(coef, targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn poly(degree: usize, standardize: bool) -> BasisSpec {
        BasisSpec::Polynomial { degree, standardize }
    }

    #[test]
    fn raw_monomial_rows() {
        let b = poly(1, false).freeze(&[0.0, 1.0, 2.0], 1).unwrap();
        let m = design_matrix(&b, &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(m.data, vec![1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn hypercube_rows() {
        let spec = BasisSpec::Hypercube {
            bins: vec![2],
            lower: vec![0.0],
            upper: vec![1.0],
        };
        let b = spec.freeze(&[0.1, 0.9], 1).unwrap();
        let m = design_matrix(&b, &[0.1, 0.9]).unwrap();
        assert_eq!(m.data, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn total_degree_two_in_two_dims() {
        let states = [0.0, 0.0, 1.0, 2.0, -1.0, 3.0];
        let b = poly(2, false).freeze(&states, 2).unwrap();
        assert_eq!(b.size(), 6);
        let mut phi = [0.0; 6];
        b.features(&[2.0, 3.0], &mut phi);
        assert_eq!(phi, [1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn empty_input() {
        assert_eq!(poly(2, true).freeze(&[], 1), Err(RegressError::EmptyInput));
    }

    #[test]
    fn affine_target_is_exact() {
        let xs: Vec<f64> = (0..200).map(|i| -3.0 + 0.03 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 + 2.0 * x).collect();
        for degree in 1..=4 {
            let fit = fit_conditional_expectation(&poly(degree, true), &xs, 1, &ys, 0.0).unwrap();
            assert!(fit.residual_rms <= 1e-8, "{degree}: {}", fit.residual_rms);
            assert!((predict(&fit, &[10.0]) - 23.0).abs() < 1e-8);
            for (x, y) in xs.iter().zip(&ys) {
                assert!((predict(&fit, &[*x]) - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn constant_target() {
        let xs: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let ys = vec![5.0; 50];
        let fit = fit_conditional_expectation(&poly(3, true), &xs, 1, &ys, 0.0).unwrap();
        assert!((fit.coefficients[0] - 5.0).abs() < 1e-10);
        assert!(fit.coefficients[1..].iter().all(|c| c.abs() < 1e-10));
        assert!(fit.residual_rms < 1e-10);
        assert!((predict(&fit, &[123.0]) - 5.0).abs() < 1e-10 * 123.0f64.powi(3));
        assert!((predict(&fit, &[0.5]) - 5.0).abs() < 1e-10);
    }

    #[test]
    fn degenerate_axis_drops_out() {
        let xs = vec![0.7; 10];
        let ys: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let fit = fit_conditional_expectation(&poly(3, true), &xs, 1, &ys, 0.0).unwrap();
        assert_eq!(fit.coefficients.len(), 1);
        assert!((fit.coefficients[0] - 4.5).abs() < 1e-14);
        assert_eq!(fit.lambda, 0.0);
    }

    #[test]
    fn collinear_raw_design_escalates_ridge() {
        let xs = vec![0.7; 10];
        let ys = vec![1.0; 10];
        let fit = fit_conditional_expectation(&poly(2, false), &xs, 1, &ys, 0.0).unwrap();
        assert!(fit.lambda > 0.0);
        assert!((predict(&fit, &[0.7]) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn hypercube_out_of_box_clamps_to_boundary_cell() {
        let spec = BasisSpec::Hypercube {
            bins: vec![4],
            lower: vec![0.0],
            upper: vec![1.0],
        };
        let xs: Vec<f64> = (0..40).map(|i| (i as f64 + 0.5) / 40.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (4.0 * x).floor()).collect();
        let fit = fit_conditional_expectation(&spec, &xs, 1, &ys, 0.0).unwrap();
        assert!((predict(&fit, &[7.0]) - fit.coefficients[3]).abs() < 1e-15);
        assert!((predict(&fit, &[-7.0]) - fit.coefficients[0]).abs() < 1e-15);
        assert!((fit.coefficients[3] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_quadratic_recovery_within_ols_standard_errors() {
        let n = 10_000;
        let noise = 0.1;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| x * x + noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let fit = fit_conditional_expectation(&poly(2, false), &xs, 1, &ys, 0.0).unwrap();
        // Closed-form OLS covariance: noise^2 (X^T X)^{-1}.
        let x = DMatrix::from_fn(n, 3, |r, c| xs[r].powi(c as i32));
        let inv = (x.transpose() * &x).try_inverse().unwrap();
        let se = noise * inv[(2, 2)].sqrt();
        assert!(
            (fit.coefficients[2] - 1.0).abs() < 3.0 * se,
            "{} se {se}",
            fit.coefficients[2]
        );
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..2000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sin() + 0.1 * x.powi(3)).collect();
        let basis = poly(3, true);
        let fit = fit_conditional_expectation(&basis, &xs, 1, &ys, 0.0).unwrap();
        let yhat: Vec<f64> = xs.iter().map(|x| predict(&fit, &[*x])).collect();
        let refit = fit_conditional_expectation(&basis, &xs, 1, &yhat, 0.0).unwrap();
        for (a, b) in fit.coefficients.iter().zip(&refit.coefficients) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn residual_is_monotone_in_degree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<f64> = (0..3000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.abs() + 0.3 * x.cos()).collect();
        let rms: Vec<f64> = (0..=6)
            .map(|p| {
                fit_conditional_expectation(&poly(p, true), &xs, 1, &ys, 0.0)
                    .unwrap()
                    .residual_rms
            })
            .collect();
        for w in rms.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{rms:?}");
        }
    }

    #[test]
    fn ridge_shrinks_coefficients() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64 / 50.0 - 1.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 + x).collect();
        let free = fit_conditional_expectation(&poly(1, false), &xs, 1, &ys, 0.0).unwrap();
        let ridged = fit_conditional_expectation(&poly(1, false), &xs, 1, &ys, 50.0).unwrap();
        assert_eq!(ridged.lambda, 50.0);
        let norm = |c: &[f64]| c.iter().map(|v| v * v).sum::<f64>();
        assert!(norm(&ridged.coefficients) < norm(&free.coefficients));
    }

    #[test]
    fn fit_serializes() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let fit = fit_conditional_expectation(&poly(2, true), &xs, 1, &xs, 0.0).unwrap();
        let json = serde_json::to_string(&fit).unwrap();
        let back: RegressionFit = serde_json::from_str(&json).unwrap();
        assert_eq!(predict(&back, &[3.3]), predict(&fit, &[3.3]));
    }

    proptest! {
        #[test]
        fn fitted_values_shift_with_the_target(
            seed in 0u64..1000,
            shift in -50.0f64..50.0,
            degree in 0usize..5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..400).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let ys: Vec<f64> = xs.iter().map(|x| x.sin() + rng.sample::<f64, _>(StandardNormal)).collect();
            let shifted: Vec<f64> = ys.iter().map(|y| y + shift).collect();
            let a = fit_conditional_expectation(&poly(degree, true), &xs, 1, &ys, 0.0).unwrap();
            let b = fit_conditional_expectation(&poly(degree, true), &xs, 1, &shifted, 0.0).unwrap();
            for x in [-2.0, 0.0, 0.5, 3.0] {
                let d = predict(&b, &[x]) - predict(&a, &[x]);
                prop_assert!((d - shift).abs() <= 1e-9 * (1.0 + shift.abs()), "{} vs {}", d, shift);
            }
        }
    }
}
