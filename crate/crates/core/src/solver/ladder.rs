use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::forward::{simulate, PathBundle, TimeGrid};
use crate::model::ProblemSpec;
use crate::par;
use crate::regress::BasisSpec;

use super::scheme::{solve_penalized, solve_reflected_scheme};
use super::stats::summarize;
use super::{Picard, SolverError};

/// Pass thresholds applied to a ladder by [`ConvergenceReport::checks`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LadderThresholds {
    /// Largest allowed `max / min` of the scaled penalty statistic.
    pub penalty_ratio_max: f64,
    pub slope_min: f64,
    pub slope_max: f64,
    /// Relative slack when requiring consecutive sup-gaps to shrink.
    pub gap_noise: f64,
    /// Gaps at or below this are treated as zero.
    pub zero_tol: f64,
}

impl Default for LadderThresholds {
    fn default() -> Self {
        LadderThresholds {
            penalty_ratio_max: 2.0,
            slope_min: -1.3,
            slope_max: -0.7,
            gap_noise: 0.1,
            zero_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub n: f64,
    /// `max |Y^{n} - Y^{n_prev}|`; absent on the first rung.
    pub sup_gap_prev: Option<f64>,
    pub penalty_scaled: f64,
    pub penalty_raw: f64,
    pub obstacle_violation: f64,
    pub complementarity: f64,
    /// `max |Y^{n} - Y^{reflected}|`.
    pub reflected_gap: f64,
    pub y0: Vec<f64>,
    pub sup_y_sq: f64,
    pub int_z_sq: f64,
    pub k_terminal_sq: f64,
    pub max_sweeps: usize,
    pub unconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub spec_name: String,
    pub seed: u64,
    /// Checksum of the shared path bundle, hex.
    pub bundle_checksum: String,
    pub n_paths: usize,
    pub grid: TimeGrid,
    pub x0: Vec<f64>,
    pub entries: Vec<LadderEntry>,
    pub reflected_y0: Vec<f64>,
    pub reflected_obstacle_violation: f64,
    /// Log-log least-squares slope of the obstacle violation against `n`.
    pub violation_slope: Option<f64>,
    pub penalty_raw_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Least-squares slope of `ln y` against `ln x`; `None` if fewer than two
/// points or any value is non-positive.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

fn sup_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    par::map_chunks(a.len(), |r| {
        a[r.clone()]
            .iter()
            .zip(&b[r])
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    })
    .into_iter()
    .fold(0.0, f64::max)
}

fn check_ladder(n_list: &[f64]) -> Result<(), SolverError> {
    if n_list.len() < 3 {
        return Err(SolverError::InvalidLadder(format!(
            "need at least 3 penalty levels, got {}",
            n_list.len()
        )));
    }
    if n_list.windows(2).any(|w| !(w[0] < w[1])) || !(n_list[0] >= 1.0) {
        return Err(SolverError::InvalidLadder(
            "penalty levels must be >= 1 and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Simulates one bundle and runs the ladder on it.
#[allow(clippy::too_many_arguments)]
pub fn run_n_ladder(
    spec: &Arc<ProblemSpec>,
    grid: &TimeGrid,
    basis: &BasisSpec,
    x: &[f64],
    n_paths: usize,
    seed: u64,
    n_list: &[f64],
    picard: Picard,
) -> Result<ConvergenceReport, SolverError> {
    check_ladder(n_list)?;
    let bundle = Arc::new(simulate(spec, grid, x, n_paths, seed)?);
    run_n_ladder_on(spec, &bundle, basis, n_list, picard)
}

/// Runs the reflected scheme and the penalized scheme at every level in
/// `n_list`, all on `bundle`.
pub fn run_n_ladder_on(
    spec: &Arc<ProblemSpec>,
    bundle: &Arc<PathBundle>,
    basis: &BasisSpec,
    n_list: &[f64],
    picard: Picard,
) -> Result<ConvergenceReport, SolverError> {
    check_ladder(n_list)?;
    let checksum = bundle.checksum();

    let reflected = solve_reflected_scheme(spec, bundle, basis, picard)?;
    let reflected_summary = summarize(&reflected)?;
    let reflected_y = reflected.y;

    let mut entries = Vec::with_capacity(n_list.len());
    let mut prev: Option<Vec<f64>> = None;
    for &n in n_list {
        let mut sol = solve_penalized(spec, bundle, basis, n, picard)?;
        sol.accumulate_k()?;
        debug_assert_eq!(sol.bundle.checksum(), checksum);
        let s = summarize(&sol)?;
        entries.push(LadderEntry {
            n,
            sup_gap_prev: prev.as_ref().map(|p| sup_abs_diff(p, &sol.y)),
            penalty_scaled: s.penalty.sup_scaled,
            penalty_raw: s.penalty.sup_raw,
            obstacle_violation: s.obstacle_violation,
            complementarity: s.complementarity,
            reflected_gap: sup_abs_diff(&reflected_y, &sol.y),
            y0: s.y0,
            sup_y_sq: s.sup_y_sq,
            int_z_sq: s.int_z_sq,
            k_terminal_sq: s.k_terminal_sq,
            max_sweeps: sol.diagnostics.sweeps.iter().copied().max().unwrap_or(0),
            unconverged: sol.diagnostics.unconverged,
        });
        prev = Some(sol.y);
    }

    let ns: Vec<f64> = entries.iter().map(|e| e.n).collect();
    let viol: Vec<f64> = entries.iter().map(|e| e.obstacle_violation).collect();
    let raw: Vec<f64> = entries.iter().map(|e| e.penalty_raw).collect();
    Ok(ConvergenceReport {
        spec_name: spec.name.clone(),
        seed: bundle.seed,
        bundle_checksum: format!("{checksum:016x}"),
        n_paths: bundle.n_paths,
        grid: bundle.grid,
        x0: bundle.x0.clone(),
        violation_slope: loglog_slope(&ns, &viol),
        penalty_raw_slope: loglog_slope(&ns, &raw),
        entries,
        reflected_y0: reflected_summary.y0,
        reflected_obstacle_violation: reflected_summary.obstacle_violation,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl ConvergenceReport {
    pub const CSV_HEADER: &'static str =
        "n,sup_gap_prev,penalty_scaled,penalty_raw,obstacle_violation,complementarity,reflected_gap";

    /// One row per rung; `sup_gap_prev` is empty on the first.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.n,
                opt(e.sup_gap_prev),
                e.penalty_scaled,
                e.penalty_raw,
                e.obstacle_violation,
                e.complementarity,
                e.reflected_gap
            )?;
        }
        Ok(())
    }

    pub fn sup_gaps(&self) -> Vec<f64> {
        self.entries.iter().filter_map(|e| e.sup_gap_prev).collect()
    }

    /// Ladder properties: bounded scaled penalty, violation decay slope,
    /// shrinking consecutive gaps, shrinking complementarity residual.
    pub fn checks(&self, th: &LadderThresholds) -> Vec<LadderCheck> {
        let mut out = Vec::new();
        let zero = |v: f64| v <= th.zero_tol;

        let scaled: Vec<f64> = self.entries.iter().map(|e| e.penalty_scaled).collect();
        let hi = scaled.iter().copied().fold(0.0, f64::max);
        let lo = scaled.iter().copied().fold(f64::INFINITY, f64::min);
        let (pass, detail) = if scaled.iter().all(|v| zero(*v)) {
            (true, "penalty inactive on every rung".to_string())
        } else {
            let ratio = hi / lo;
            (
                ratio < th.penalty_ratio_max,
                format!("max/min = {ratio:.4} (limit {})", th.penalty_ratio_max),
            )
        };
        out.push(LadderCheck {
            name: "penalty-scaled-bounded".into(),
            pass,
            detail,
        });

        let viol: Vec<f64> = self.entries.iter().map(|e| e.obstacle_violation).collect();
        let (pass, detail) = if viol.iter().all(|v| zero(*v)) {
            (true, "no obstacle violation on any rung".to_string())
        } else {
            match self.violation_slope {
                Some(s) => (
                    (th.slope_min..=th.slope_max).contains(&s),
                    format!("slope = {s:.4} (range [{}, {}])", th.slope_min, th.slope_max),
                ),
                None => (false, "slope undefined: some rung has zero violation".to_string()),
            }
        };
        out.push(LadderCheck {
            name: "violation-decay-slope".into(),
            pass,
            detail,
        });

        let gaps = self.sup_gaps();
        let (pass, detail) = if gaps.iter().all(|v| zero(*v)) {
            (true, "all consecutive gaps vanish".to_string())
        } else {
            let ok = gaps.windows(2).all(|w| w[1] < w[0] * (1.0 + th.gap_noise));
            (ok, format!("gaps = {gaps:?}"))
        };
        out.push(LadderCheck {
            name: "sup-gaps-decreasing".into(),
            pass,
            detail,
        });

        let comp: Vec<f64> = self.entries.iter().map(|e| e.complementarity).collect();
        let (pass, detail) = if comp.iter().all(|v| zero(*v)) {
            (true, "complementarity residual vanishes".to_string())
        } else {
            let ok = comp.windows(2).all(|w| w[1] <= w[0]);
            (ok, format!("residuals = {comp:?}"))
        };
        out.push(LadderCheck {
            name: "complementarity-decreasing".into(),
            pass,
            detail,
        });
        out
    }

    pub fn passes(&self, th: &LadderThresholds) -> bool {
        self.checks(th).iter().all(|c| c.pass)
    }
}
