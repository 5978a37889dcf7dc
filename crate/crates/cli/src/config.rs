//! TOML run configuration. Unknown keys anywhere are errors.

use std::path::{Path, PathBuf};

use rbsde_core::forward::TimeGrid;
use rbsde_core::model::validate::{DEFAULT_HALF_WIDTH, DEFAULT_POINTS_PER_AXIS, DEFAULT_THETA, DEFAULT_TOL_RHO};
use rbsde_core::model::{catalog, ProblemDoc, ProblemSpec, ValidationSettings};
use rbsde_core::oracle::{DEFAULT_NODES, DEFAULT_ORDER};
use rbsde_core::regress::BasisSpec;
use rbsde_core::solver::{LadderThresholds, Picard};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub ladder: LadderSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub validate: ValidateSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Exactly one of `catalog` and `inline`, plus optional field overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub catalog: Option<String>,
    pub inline: Option<ProblemDoc>,
    #[serde(default)]
    pub overrides: ProblemOverrides,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemOverrides {
    pub name: Option<String>,
    pub horizon: Option<f64>,
    pub b: Option<Vec<String>>,
    pub sigma: Option<Vec<Vec<String>>>,
    pub f: Option<Vec<String>>,
    pub h: Option<Vec<String>>,
    pub g: Option<Vec<Vec<String>>>,
    pub q_growth: Option<f64>,
    pub p_growth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    /// Initial state; defaults to the origin.
    pub x: Option<Vec<f64>>,
    pub t0: f64,
    pub n_paths: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            x: None,
            t0: 0.0,
            n_paths: 100_000,
            steps: 50,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveScheme {
    Penalized,
    Reflected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub scheme: SolveScheme,
    /// Penalty level `n`.
    pub n: f64,
    pub basis: BasisSpec,
    pub picard: Picard,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            scheme: SolveScheme::Penalized,
            n: 128.0,
            basis: BasisSpec::default(),
            picard: Picard::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LadderSection {
    pub n_list: Vec<f64>,
    pub thresholds: LadderThresholds,
}

impl Default for LadderSection {
    fn default() -> Self {
        LadderSection {
            n_list: vec![8.0, 16.0, 32.0, 64.0, 128.0],
            thresholds: LadderThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub nodes: usize,
    pub quadrature_order: usize,
    /// Explicit grid bounds; by default `x -/+ 5 sigma sqrt(T - t0)`.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// Also run the exhaustive search on a coarse copy of the problem.
    pub enumerate: bool,
    pub enumerate_steps: usize,
    pub enumerate_nodes: usize,
    /// Monte Carlo check of the DP action table on this many paths (0: skip).
    pub evaluate_paths: usize,
    /// `manifest.json` of an earlier `solve` run to compare against.
    pub compare: Option<PathBuf>,
    /// Largest |Y0 - V| accepted by the comparison.
    pub tolerance: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            nodes: DEFAULT_NODES,
            quadrature_order: DEFAULT_ORDER,
            lower: None,
            upper: None,
            enumerate: false,
            enumerate_steps: 4,
            enumerate_nodes: 21,
            evaluate_paths: 0,
            compare: None,
            tolerance: 0.05,
        }
    }
}

/// Validator grid and tolerances. The Lipschitz sampler seed is derived
/// from `simulate.seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateSection {
    pub half_width: f64,
    pub points_per_axis: usize,
    pub tol_rho: f64,
    pub theta: f64,
    pub lipschitz_pairs: usize,
    pub lipschitz_radius: f64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        let d = ValidationSettings::default();
        ValidateSection {
            half_width: DEFAULT_HALF_WIDTH,
            points_per_axis: DEFAULT_POINTS_PER_AXIS,
            tol_rho: DEFAULT_TOL_RHO,
            theta: DEFAULT_THETA,
            lipschitz_pairs: d.lipschitz_pairs,
            lipschitz_radius: d.lipschitz_radius,
        }
    }
}

impl ValidateSection {
    pub fn settings(&self, seed: u64) -> ValidationSettings {
        ValidationSettings {
            half_width: self.half_width,
            points_per_axis: self.points_per_axis,
            tol_rho: self.tol_rho,
            theta: self.theta,
            lipschitz_pairs: self.lipschitz_pairs,
            lipschitz_radius: self.lipschitz_radius,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Also write the simulated forward paths.
    pub dump_paths: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            dump_paths: false,
        }
    }
}

fn config_error(key: &str, msg: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("{key}: {msg}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, Failure> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Failure::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    /// The problem document after applying overrides.
    pub fn problem_doc(&self) -> Result<ProblemDoc, Failure> {
        let p = &self.problem;
        let mut doc = match (&p.catalog, &p.inline) {
            (Some(name), None) => catalog::doc(name).ok_or_else(|| {
                config_error(
                    "problem.catalog",
                    format!("unknown problem `{name}` (known: {})", catalog::NAMES.join(", ")),
                )
            })?,
            (None, Some(doc)) => doc.clone(),
            _ => return Err(config_error("problem", "set exactly one of `catalog` and `inline`")),
        };
        let o = p.overrides.clone();
        if let Some(v) = o.name {
            doc.name = v;
        }
        if let Some(v) = o.horizon {
            doc.horizon = v;
        }
        if let Some(v) = o.b {
            doc.b = v;
        }
        if let Some(v) = o.sigma {
            doc.sigma = v;
        }
        if let Some(v) = o.f {
            doc.f = v;
        }
        if let Some(v) = o.h {
            doc.h = v;
        }
        if let Some(v) = o.g {
            doc.g = v;
        }
        if let Some(v) = o.q_growth {
            doc.q_growth = v;
        }
        if let Some(v) = o.p_growth {
            doc.p_growth = v;
        }
        Ok(doc)
    }

    pub fn problem(&self) -> Result<ProblemSpec, Failure> {
        ProblemSpec::from_doc(&self.problem_doc()?).map_err(|e| config_error("problem", e))
    }

    pub fn grid(&self, spec: &ProblemSpec) -> Result<TimeGrid, Failure> {
        TimeGrid::new(self.simulate.t0, spec.horizon, self.simulate.steps).map_err(|e| config_error("simulate", e))
    }

    pub fn x0(&self, spec: &ProblemSpec) -> Result<Vec<f64>, Failure> {
        let x = self.simulate.x.clone().unwrap_or_else(|| vec![0.0; spec.d]);
        if x.len() != spec.d {
            return Err(config_error(
                "simulate.x",
                format!("expected {} coordinates, got {}", spec.d, x.len()),
            ));
        }
        Ok(x)
    }

    /// Range checks that do not need the problem.
    fn check(&self) -> Result<(), Failure> {
        let s = &self.simulate;
        if s.n_paths < 2 {
            return Err(config_error("simulate.n_paths", "must be at least 2"));
        }
        if s.steps == 0 {
            return Err(config_error("simulate.steps", "must be at least 1"));
        }
        if s.x.as_ref().is_some_and(|x| x.iter().any(|v| !v.is_finite())) {
            return Err(config_error("simulate.x", "must be finite"));
        }
        if !(self.solver.n >= 1.0 && self.solver.n.is_finite()) {
            return Err(config_error("solver.n", "must be a finite number >= 1"));
        }
        let pic = &self.solver.picard;
        if pic.max_iter == 0 || !(pic.tol > 0.0) {
            return Err(config_error("solver.picard", "max_iter >= 1 and tol > 0 required"));
        }
        match &self.solver.basis {
            BasisSpec::Polynomial { degree, .. } if *degree > 12 => {
                return Err(config_error("solver.basis.degree", "must be at most 12"));
            }
            BasisSpec::Hypercube { bins, lower, upper }
                if bins.len() != lower.len()
                    || bins.len() != upper.len()
                    || bins.contains(&0)
                    || lower.iter().zip(upper).any(|(a, b)| !(a < b)) =>
            {
                return Err(config_error(
                    "solver.basis",
                    "bins, lower and upper need equal lengths, bins >= 1 and lower < upper",
                ));
            }
            _ => {}
        }
        let l = &self.ladder.n_list;
        if l.len() < 3 {
            return Err(config_error(
                "ladder.n_list",
                format!("need at least 3 penalty levels, got {}", l.len()),
            ));
        }
        if l.iter().any(|n| !(*n >= 1.0 && n.is_finite())) || l.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_error(
                "ladder.n_list",
                "must be finite, >= 1 and strictly increasing",
            ));
        }
        let o = &self.oracle;
        if o.nodes < 3 || o.enumerate_nodes < 3 {
            return Err(config_error("oracle.nodes", "lattices need at least 3 nodes"));
        }
        if o.quadrature_order == 0 || o.quadrature_order > 64 {
            return Err(config_error("oracle.quadrature_order", "must be in 1..=64"));
        }
        if o.lower.is_some() != o.upper.is_some() {
            return Err(config_error("oracle", "set both `lower` and `upper` or neither"));
        }
        if let (Some(a), Some(b)) = (o.lower, o.upper) {
            if !(a < b) {
                return Err(config_error("oracle.lower", "must be below `upper`"));
            }
        }
        if !(self.validate.theta > 0.0) {
            return Err(config_error("validate.theta", "must be positive"));
        }
        if !(self.validate.half_width > 0.0 && self.validate.lipschitz_radius > 0.0) {
            return Err(config_error(
                "validate",
                "half_width and lipschitz_radius must be positive",
            ));
        }
        if self.validate.points_per_axis == 0 || self.validate.lipschitz_pairs == 0 {
            return Err(config_error(
                "validate",
                "points_per_axis and lipschitz_pairs must be positive",
            ));
        }
        Ok(())
    }
}
