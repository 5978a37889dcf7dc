//! Seeded Euler–Maruyama simulation of the forward diffusion
//! `dX = b(t, X) dt + sigma(t, X) dB`.
//!
//! Each path draws its Brownian increments from its own ChaCha8 stream
//! (key = seed, stream id = path index, consumed step by step), so the
//! ensemble is a pure function of `(spec, grid, x, N, seed)` and does not
//! depend on how paths are scheduled across threads.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::ExprError;
use crate::model::ProblemSpec;
use crate::par;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForwardError {
    #[error("coefficient evaluation failed on path {path}, step {step}: {source}")]
    Domain {
        path: usize,
        step: usize,
        source: ExprError,
    },
    #[error("path {path} left the finite reals at step {step}")]
    NonFiniteState { path: usize, step: usize },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("start point has dimension {got}, problem has d = {want}")]
    Dimension { got: usize, want: usize },
}

/// Uniform grid `t_k = t0 + k (T - t0) / K`, `k = 0..=K`, with node K equal
/// to T exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, horizon: f64, steps: usize) -> Result<TimeGrid, ForwardError> {
        if !(t0 >= 0.0 && t0 < horizon && horizon.is_finite()) {
            return Err(ForwardError::InvalidGrid(format!(
                "need 0 <= t0 < T, got t0 = {t0}, T = {horizon}"
            )));
        }
        if steps == 0 {
            return Err(ForwardError::InvalidGrid("need at least one step".into()));
        }
        Ok(TimeGrid { t0, horizon, steps })
    }

    pub fn dt(&self) -> f64 {
        (self.horizon - self.t0) / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            self.t0 + k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }
}

/// A simulated ensemble. Arrays are stored step-major: the states of all
/// paths at step k are contiguous, which is the access pattern of the
/// backward regressions.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub d: usize,
    pub seed: u64,
    pub spec_name: String,
    pub x0: Vec<f64>,
    states: Vec<f64>,
    dw: Vec<f64>,
}

impl PathBundle {
    /// States of every path at step `k`, `n_paths × d`.
    pub fn states_at(&self, k: usize) -> &[f64] {
        let w = self.n_paths * self.d;
        &self.states[k * w..(k + 1) * w]
    }

    /// Increments `B_{t_{k+1}} - B_{t_k}` of every path, `n_paths × d`.
    pub fn increments_at(&self, k: usize) -> &[f64] {
        let w = self.n_paths * self.d;
        &self.dw[k * w..(k + 1) * w]
    }

    pub fn state(&self, path: usize, k: usize) -> &[f64] {
        let at = (k * self.n_paths + path) * self.d;
        &self.states[at..at + self.d]
    }

    pub fn increment(&self, path: usize, k: usize) -> &[f64] {
        let at = (k * self.n_paths + path) * self.d;
        &self.dw[at..at + self.d]
    }

    /// FNV-1a over the bit patterns of states and increments.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.states.iter().chain(&self.dw) {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Writes `path,step,time,x1..xd` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "path,step,time")?;
        for l in 0..self.d {
            write!(out, ",x{}", l + 1)?;
        }
        writeln!(out)?;
        for p in 0..self.n_paths {
            for k in 0..=self.grid.steps {
                write!(out, "{p},{k},{}", self.grid.time(k))?;
                for v in self.state(p, k) {
                    write!(out, ",{v}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

/// Gaussian stream of one path.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// One Euler–Maruyama step from `x` at time `t` with increment `dw`.
pub fn euler_step(
    spec: &ProblemSpec,
    t: f64,
    dt: f64,
    x: &[f64],
    dw: &[f64],
    out: &mut [f64],
) -> Result<(), ExprError> {
    let d = spec.d;
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * d];
    spec.drift(t, x, &mut b)?;
    spec.diffusion(t, x, &mut s)?;
    for k in 0..d {
        let noise: f64 = (0..d).map(|l| s[k * d + l] * dw[l]).sum();
        out[k] = x[k] + b[k] * dt + noise;
    }
    Ok(())
}

fn simulate_path(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    x: &[f64],
    seed: u64,
    path: usize,
) -> Result<(Vec<f64>, Vec<f64>), ForwardError> {
    let d = spec.d;
    let steps = grid.steps;
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut rng = path_rng(seed, path);
    let mut states = vec![0.0; (steps + 1) * d];
    let mut dw = vec![0.0; steps * d];
    states[..d].copy_from_slice(x);
    let mut next = vec![0.0; d];
    for k in 0..steps {
        for v in &mut dw[k * d..(k + 1) * d] {
            let z: f64 = rng.sample(StandardNormal);
            *v = z * sqrt_dt;
        }
        euler_step(
            spec,
            grid.time(k),
            dt,
            &states[k * d..(k + 1) * d],
            &dw[k * d..(k + 1) * d],
            &mut next,
        )
        .map_err(|source| ForwardError::Domain { path, step: k, source })?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(ForwardError::NonFiniteState { path, step: k + 1 });
        }
        states[(k + 1) * d..(k + 2) * d].copy_from_slice(&next);
    }
    Ok((states, dw))
}

/// Simulates `n_paths` trajectories started at `x` on `grid`.
pub fn simulate(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    x: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle, ForwardError> {
    assert!(n_paths >= 1, "need at least one path");
    let d = spec.d;
    if x.len() != d {
        return Err(ForwardError::Dimension { got: x.len(), want: d });
    }
    let per_path = par::map_indices(n_paths, |p| simulate_path(spec, grid, x, seed, p));
    let steps = grid.steps;
    let mut states = vec![0.0; (steps + 1) * n_paths * d];
    let mut dw = vec![0.0; steps * n_paths * d];
    for (p, r) in per_path.into_iter().enumerate() {
        let (s, w) = r?;
        for k in 0..=steps {
            let at = (k * n_paths + p) * d;
            states[at..at + d].copy_from_slice(&s[k * d..(k + 1) * d]);
            if k < steps {
                dw[at..at + d].copy_from_slice(&w[k * d..(k + 1) * d]);
            }
        }
    }
    Ok(PathBundle {
        grid: *grid,
        n_paths,
        d,
        seed,
        spec_name: spec.name.clone(),
        x0: x.to_vec(),
        states,
        dw,
    })
}

/// Monte Carlo estimate of `E[sup_k |X_{t_k}|^gamma]` over the grid nodes.
pub fn empirical_sup_moment(bundle: &PathBundle, gamma: f64) -> f64 {
    let total: f64 = (0..bundle.n_paths)
        .map(|p| {
            (0..=bundle.grid.steps)
                .map(|k| {
                    let s = bundle.state(p, k);
                    s.iter().map(|v| v * v).sum::<f64>().sqrt().powf(gamma)
                })
                .fold(0.0, f64::max)
        })
        .sum();
    total / bundle.n_paths as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{catalog, ProblemSpec};

    fn scalar(b: &str, sigma: &str) -> ProblemSpec {
        let mut doc = catalog::doc(catalog::CONST).unwrap();
        doc.b = vec![b.into()];
        doc.sigma = vec![vec![sigma.into()]];
        ProblemSpec::from_doc(&doc).unwrap()
    }

    #[test]
    fn grid_nodes() {
        let g = TimeGrid::new(0.0, 1.0, 3).unwrap();
        assert_eq!(g.time(3), 1.0);
        assert!(g.times().windows(2).all(|w| w[0] < w[1]));
        assert!(TimeGrid::new(1.0, 1.0, 3).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
        assert!(TimeGrid::new(-0.1, 1.0, 1).is_err());
    }

    #[test]
    fn degenerate_sde_is_constant() {
        let spec = scalar("0", "0");
        let g = TimeGrid::new(0.0, 1.0, 5).unwrap();
        let b = simulate(&spec, &g, &[1.5], 7, 1).unwrap();
        for p in 0..7 {
            for k in 0..=5 {
                assert_eq!(b.state(p, k), &[1.5]);
            }
        }
    }

    #[test]
    fn deterministic_ode() {
        let spec = scalar("1", "0");
        let g = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let b = simulate(&spec, &g, &[0.0], 3, 9).unwrap();
        let xs: Vec<f64> = (0..=4).map(|k| b.state(2, k)[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let spec = scalar("0.1*x1", "1 + 0.2*sin(x1)");
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let a = simulate(&spec, &g, &[0.3], 500, 42).unwrap();
        let b = simulate(&spec, &g, &[0.3], 500, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
        let c = simulate(&spec, &g, &[0.3], 500, 43).unwrap();
        assert_ne!(a.checksum(), c.checksum());
        // A path does not depend on how many other paths are simulated.
        let small = simulate(&spec, &g, &[0.3], 10, 42).unwrap();
        assert_eq!(small.state(9, 10), a.state(9, 10));
    }

    #[test]
    fn one_step_replay() {
        let spec = scalar("0.1*x1 - t", "1 + 0.2*sin(x1)");
        let g = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let b = simulate(&spec, &g, &[0.3], 50, 5).unwrap();
        let mut out = [0.0];
        for p in [0, 17, 49] {
            for k in 0..8 {
                euler_step(&spec, g.time(k), g.dt(), b.state(p, k), b.increment(p, k), &mut out).unwrap();
                assert_eq!(out[0].to_bits(), b.state(p, k + 1)[0].to_bits());
            }
        }
    }

    #[test]
    fn increments_are_gaussian() {
        let spec = scalar("0", "1");
        let g = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let n = 20_000;
        let b = simulate(&spec, &g, &[0.0], n, 3).unwrap();
        let dt = g.dt();
        for k in 0..4 {
            let w = b.increments_at(k);
            let mean = w.iter().sum::<f64>() / n as f64;
            let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se_mean = (dt / n as f64).sqrt();
            let se_var = dt * (2.0 / (n - 1) as f64).sqrt();
            assert!(mean.abs() < 4.0 * se_mean, "step {k}: mean {mean}");
            assert!((var - dt).abs() < 4.0 * se_var, "step {k}: var {var}");
        }
    }

    #[test]
    fn exploding_path_is_reported() {
        let spec = scalar("x1^3", "0");
        let g = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let err = simulate(&spec, &g, &[10.0], 2, 1).unwrap_err();
        assert!(
            matches!(
                err,
                ForwardError::NonFiniteState { path: 0, .. } | ForwardError::Domain { path: 0, .. }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn sup_moment_of_constant_paths() {
        let spec = scalar("0", "0");
        let g = TimeGrid::new(0.0, 1.0, 5).unwrap();
        let b = simulate(&spec, &g, &[2.0], 4, 1).unwrap();
        assert_eq!(empirical_sup_moment(&b, 2.0), 4.0);
        let b = simulate(&spec, &g, &[0.0], 4, 1).unwrap();
        assert_eq!(empirical_sup_moment(&b, 3.0), 0.0);
    }

    #[test]
    fn csv_dump_shape() {
        let spec = scalar("1", "0");
        let g = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let b = simulate(&spec, &g, &[0.0], 2, 1).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path,step,time,x1");
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert_eq!(lines[3], "0,2,1,1");
    }
}
