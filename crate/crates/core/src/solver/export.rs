use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::forward::TimeGrid;
use crate::regress::BasisSpec;

use super::stats::SolutionSummary;
use super::{Diagnostics, PenalizedSolution, Picard, Scheme};

/// JSON description of a solve, without the path arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionManifest {
    pub spec_name: String,
    pub scheme: Scheme,
    pub penalty: Option<f64>,
    pub grid: TimeGrid,
    pub basis: BasisSpec,
    pub picard: Picard,
    pub n_paths: usize,
    pub seed: u64,
    pub bundle_checksum: String,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub diagnostics: Diagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<SolutionSummary>,
}

impl SolutionManifest {
    pub fn new(sol: &PenalizedSolution, summary: Option<SolutionSummary>) -> SolutionManifest {
        SolutionManifest {
            spec_name: sol.spec.name.clone(),
            scheme: sol.scheme,
            penalty: sol.penalty,
            grid: sol.grid(),
            basis: sol.basis.clone(),
            picard: sol.picard,
            n_paths: sol.n_paths(),
            seed: sol.bundle.seed,
            bundle_checksum: format!("{:016x}", sol.bundle.checksum()),
            x0: sol.bundle.x0.clone(),
            y0: sol.y0(),
            diagnostics: sol.diagnostics.clone(),
            summary,
        }
    }
}

/// Long format: `step,time,component,target,index,value`, where `target`
/// is `u` for the fit of `Y` and `z<l>` for column `l` of `Z`.
pub fn write_coefficients_csv<W: Write>(sol: &PenalizedSolution, mut out: W) -> io::Result<()> {
    writeln!(out, "step,time,component,target,index,value")?;
    let grid = sol.grid();
    for (k, step) in sol.fits.iter().enumerate() {
        let t = grid.time(k);
        for i in 0..sol.m() {
            for (idx, c) in step.u[i].coefficients.iter().enumerate() {
                writeln!(out, "{k},{t},{},u,{idx},{c}", i + 1)?;
            }
            for (l, fit) in step.z[i].iter().enumerate() {
                for (idx, c) in fit.coefficients.iter().enumerate() {
                    writeln!(out, "{k},{t},{},z{},{idx},{c}", i + 1, l + 1)?;
                }
            }
        }
    }
    Ok(())
}

/// `path,y0_1..y0_m,kT_1..kT_m`.
pub fn write_paths_csv<W: Write>(sol: &PenalizedSolution, mut out: W) -> io::Result<()> {
    let (m, steps) = (sol.m(), sol.grid().steps);
    write!(out, "path")?;
    for i in 1..=m {
        write!(out, ",y0_{i}")?;
    }
    for i in 1..=m {
        write!(out, ",kT_{i}")?;
    }
    writeln!(out)?;
    for p in 0..sol.n_paths() {
        write!(out, "{p}")?;
        for i in 0..m {
            write!(out, ",{}", sol.y(p, 0, i))?;
        }
        for i in 0..m {
            write!(out, ",{}", sol.k(p, steps, i))?;
        }
        writeln!(out)?;
    }
    Ok(())
}
