use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rbsde_core::forward::{simulate, PathBundle, TimeGrid};
use rbsde_core::model::{validate_all, ProblemDoc, ProblemSpec, ValidationReport};
use rbsde_core::oracle::{
    enumerate_strategies_small, evaluate_strategy, solve_switching_dp, EnumerationResult, LatticeSpec, OracleError,
    Payoff, SwitchingValue,
};
use rbsde_core::solver::{
    run_n_ladder, solve_penalized, solve_reflected_scheme, summarize, write_coefficients_csv, write_paths_csv,
    ConvergenceReport, LadderCheck, LadderThresholds, SolutionManifest, SolverError,
};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SolveScheme};
use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    Solve,
    Converge,
    Oracle,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Solve => "solve",
            Command::Converge => "converge",
            Command::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Options {
    pub command: Command,
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub quiet: bool,
    pub dump_paths: bool,
}

/// Independent seed for the `tag`-th consumer of the top-level seed.
pub fn substream(seed: u64, tag: u64) -> u64 {
    if tag == 0 {
        seed
    } else {
        seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15)
    }
}

const STREAM_LIPSCHITZ: u64 = 1;
const STREAM_EVALUATE: u64 = 2;

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Wall-clock seconds; the only field that differs between identical
    /// runs.
    pub created_unix: u64,
    pub seed: u64,
    pub pass: bool,
    pub problem: ProblemDoc,
    pub config: RunConfig,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub solution: Option<SolutionManifest>,
}

struct Run {
    config: RunConfig,
    spec: Arc<ProblemSpec>,
    out: PathBuf,
    quiet: bool,
    outputs: Vec<String>,
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn solver_failure(e: SolverError) -> Failure {
    match e {
        SolverError::InvalidLadder(m) => Failure::Config(format!("ladder.n_list: {m}")),
        e => runtime(e),
    }
}

fn oracle_failure(e: OracleError) -> Failure {
    match e {
        OracleError::DecoupledViolation { .. } => Failure::Config(format!(
            "{e}; the lattice oracle only covers optimal switching problems (drivers without y and z)"
        )),
        OracleError::Dimension(_) | OracleError::TooLarge(_) | OracleError::InvalidLattice(_) => {
            Failure::Config(e.to_string())
        }
        e => runtime(e),
    }
}

impl Run {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn write_with<F>(&mut self, rel: &str, body: F) -> Result<(), Failure>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
        }
        let file = File::create(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        body(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        self.outputs.push(rel.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(value).map_err(runtime)?;
        self.write_with(rel, |w| writeln!(w, "{text}"))
    }

    fn finish(mut self, command: Command, pass: bool, solution: Option<SolutionManifest>) -> Result<bool, Failure> {
        let manifest = RunManifest {
            command: command.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            seed: self.config.simulate.seed,
            pass,
            problem: self.config.problem_doc()?,
            config: self.config.clone(),
            outputs: std::mem::take(&mut self.outputs),
            solution,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(runtime)?;
        let path = self.out.join("manifest.json");
        fs::write(&path, text + "\n").map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        Ok(pass)
    }

    fn bundle(&self) -> Result<(TimeGrid, Vec<f64>, PathBundle), Failure> {
        let grid = self.config.grid(&self.spec)?;
        let x = self.config.x0(&self.spec)?;
        let s = &self.config.simulate;
        let bundle = simulate(&self.spec, &grid, &x, s.n_paths, s.seed).map_err(runtime)?;
        Ok((grid, x, bundle))
    }
}

/// Runs one subcommand. `Ok(pass)` when the command completed; the caller
/// maps `pass = false` to exit code 1.
pub fn run(opts: &Options) -> Result<bool, Failure> {
    let mut config = RunConfig::load(&opts.config)?;
    if let Some(seed) = opts.seed {
        config.simulate.seed = seed;
    }
    if let Some(out) = &opts.out {
        config.output.dir = out.clone();
    }
    if opts.dump_paths {
        config.output.dump_paths = true;
    }
    let spec = Arc::new(config.problem()?);
    let out = config.output.dir.clone();
    fs::create_dir_all(&out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    let run = Run {
        config,
        spec,
        out,
        quiet: opts.quiet,
        outputs: Vec::new(),
    };
    match opts.command {
        Command::Validate => cmd_validate(run),
        Command::Solve => cmd_solve(run),
        Command::Converge => cmd_converge(run),
        Command::Oracle => cmd_oracle(run),
    }
}

fn cmd_validate(mut run: Run) -> Result<bool, Failure> {
    let settings = run
        .config
        .validate
        .settings(substream(run.config.simulate.seed, STREAM_LIPSCHITZ));
    let reports = validate_all(&run.spec, &settings).map_err(runtime)?;
    run.write_json("reports/validation.json", &reports)?;
    run.say(format!(
        "{:<20} {:<6} {:>12} {:>10}  witness",
        "assumption", "result", "worst", "tolerance"
    ));
    for r in &reports {
        run.say(format_report(r));
    }
    let pass = reports.iter().all(|r| r.pass || r.advisory);
    run.finish(Command::Validate, pass, None)
}

fn format_report(r: &ValidationReport) -> String {
    let result = match (r.pass, r.advisory) {
        (true, _) => "pass",
        (false, true) => "warn",
        (false, false) => "FAIL",
    };
    let witness = r.witness.as_ref().map_or(String::from("-"), |w| {
        let mut s = format!("t={} x={:?}", w.t, w.x);
        for (name, v) in [("i", w.i), ("j", w.j), ("l", w.l)] {
            if let Some(v) = v {
                s.push_str(&format!(" {name}={v}"));
            }
        }
        s + &format!(" value={:e}", w.value)
    });
    format!(
        "{:<20} {:<6} {:>12.4e} {:>10.1e}  {witness}",
        r.assumption, result, r.worst, r.tolerance
    )
}

fn cmd_solve(mut run: Run) -> Result<bool, Failure> {
    let (_, x, bundle) = run.bundle()?;
    if run.config.output.dump_paths {
        run.write_with("tables/forward_paths.csv", |w| bundle.write_csv(w))?;
    }
    let bundle = Arc::new(bundle);
    let s = &run.config.solver;
    let mut sol = match s.scheme {
        SolveScheme::Penalized => solve_penalized(&run.spec, &bundle, &s.basis, s.n, s.picard),
        SolveScheme::Reflected => solve_reflected_scheme(&run.spec, &bundle, &s.basis, s.picard),
    }
    .map_err(solver_failure)?;
    sol.accumulate_k().map_err(solver_failure)?;
    let summary = summarize(&sol).map_err(solver_failure)?;
    run.write_with("tables/coefficients.csv", |w| write_coefficients_csv(&sol, w))?;
    run.write_with("tables/paths.csv", |w| write_paths_csv(&sol, w))?;
    let manifest = SolutionManifest::new(&sol, Some(summary.clone()));
    run.write_json("reports/solve.json", &manifest)?;

    run.say(format!(
        "{} {:?} n={} N={} K={} x={x:?}",
        run.spec.name,
        sol.scheme,
        sol.penalty.map_or("-".to_string(), |n| n.to_string()),
        sol.n_paths(),
        sol.grid().steps
    ));
    run.say(format!("{:<6} {:>14}", "mode", "Y0"));
    for i in 0..run.spec.m {
        run.say(format!("{:<6} {:>14.8}", i + 1, sol.u(0, i, &x)));
    }
    run.say(format!(
        "penalty sup scaled {:.4e}, raw {:.4e}; obstacle violation {:.4e}; complementarity {:.4e}",
        summary.penalty.sup_scaled, summary.penalty.sup_raw, summary.obstacle_violation, summary.complementarity
    ));
    if sol.diagnostics.unconverged > 0 {
        run.say(format!(
            "warning: {} path-steps stopped at picard.max_iter",
            sol.diagnostics.unconverged
        ));
    }
    run.finish(Command::Solve, true, Some(manifest))
}

#[derive(Serialize)]
struct ConvergeOutput<'a> {
    report: &'a ConvergenceReport,
    thresholds: LadderThresholds,
    checks: Vec<LadderCheck>,
    pass: bool,
}

fn cmd_converge(mut run: Run) -> Result<bool, Failure> {
    let grid = run.config.grid(&run.spec)?;
    let x = run.config.x0(&run.spec)?;
    let (s, l, sim) = (&run.config.solver, &run.config.ladder, &run.config.simulate);
    let report = run_n_ladder(
        &run.spec,
        &grid,
        &s.basis,
        &x,
        sim.n_paths,
        sim.seed,
        &l.n_list,
        s.picard,
    )
    .map_err(solver_failure)?;
    let thresholds = l.thresholds;
    let checks = report.checks(&thresholds);
    let pass = checks.iter().all(|c| c.pass);
    run.write_with("tables/convergence.csv", |w| report.write_csv(w))?;
    run.write_json(
        "reports/convergence.json",
        &ConvergeOutput {
            report: &report,
            thresholds,
            checks: checks.clone(),
            pass,
        },
    )?;
    run.say(format!(
        "{:>8} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "n", "pen_scaled", "violation", "sup_gap", "compl", "refl_gap"
    ));
    for e in &report.entries {
        run.say(format!(
            "{:>8} {:>12.4e} {:>12.4e} {:>12} {:>12.4e} {:>12.4e}",
            e.n,
            e.penalty_scaled,
            e.obstacle_violation,
            e.sup_gap_prev.map_or("-".to_string(), |g| format!("{g:.4e}")),
            e.complementarity,
            e.reflected_gap
        ));
    }
    for c in &checks {
        run.say(format!(
            "{:<28} {}  {}",
            c.name,
            if c.pass { "pass" } else { "FAIL" },
            c.detail
        ));
    }
    run.finish(Command::Converge, pass, None)
}

#[derive(Debug, Serialize)]
struct Comparison {
    manifest: PathBuf,
    x0: f64,
    solver_y0: Vec<f64>,
    dp_value: Vec<f64>,
    abs_diff: Vec<f64>,
    tolerance: f64,
    pass: bool,
}

#[derive(Debug, Serialize)]
struct EnumerationCheck {
    steps: usize,
    nodes: usize,
    dp_value: Vec<f64>,
    enumeration: EnumerationResult,
    max_abs_diff: f64,
    pass: bool,
}

#[derive(Debug, Serialize)]
struct StrategyCheck {
    mode: usize,
    payoff: Payoff,
    dp_value: f64,
    /// Payoff does not exceed the DP value by more than 3 standard errors.
    dominated: bool,
}

#[derive(Debug, Serialize)]
struct OracleOutput {
    t0: f64,
    x: f64,
    lattice: LatticeSpec,
    values: Vec<f64>,
    actions: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    enumeration: Option<EnumerationCheck>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    strategies: Vec<StrategyCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<Comparison>,
    pass: bool,
}

fn lattice_for(run: &Run, grid: &TimeGrid, x: f64, nodes: usize) -> Result<LatticeSpec, Failure> {
    let o = &run.config.oracle;
    let mut lattice = match (o.lower, o.upper) {
        (Some(lower), Some(upper)) => LatticeSpec {
            lower,
            upper,
            nodes,
            quadrature_order: o.quadrature_order,
        },
        _ => LatticeSpec::around(&run.spec, grid, x, nodes).map_err(oracle_failure)?,
    };
    lattice.nodes = nodes;
    lattice.quadrature_order = o.quadrature_order;
    Ok(lattice)
}

/// `t,mode,switch_to,x_min,x_max,nodes`: extent of the lattice nodes where
/// the table switches from `mode` to `switch_to`.
fn write_action_boundary<W: Write>(dp: &SwitchingValue, mut w: W) -> std::io::Result<()> {
    writeln!(w, "t,mode,switch_to,x_min,x_max,nodes")?;
    let xs = dp.lattice.xs();
    for k in 0..dp.grid.steps {
        let t = dp.grid.time(k);
        for i in 0..dp.m {
            for j in 1..=dp.m {
                let hits: Vec<f64> = xs
                    .iter()
                    .enumerate()
                    .filter(|(n, _)| dp.actions[(k * dp.m + i) * xs.len() + n] == j)
                    .map(|(_, x)| *x)
                    .collect();
                if let (Some(lo), Some(hi)) = (hits.first(), hits.last()) {
                    writeln!(w, "{t},{},{j},{lo},{hi},{}", i + 1, hits.len())?;
                }
            }
        }
    }
    Ok(())
}

fn cmd_oracle(mut run: Run) -> Result<bool, Failure> {
    let spec = run.spec.clone();
    if spec.d != 1 {
        return Err(oracle_failure(OracleError::Dimension(spec.d)));
    }
    let grid = run.config.grid(&spec)?;
    let x = run.config.x0(&spec)?[0];
    let o = run.config.oracle.clone();
    let lattice = lattice_for(&run, &grid, x, o.nodes)?;
    let dp = solve_switching_dp(&spec, &lattice, &grid).map_err(oracle_failure)?;
    let values: Vec<f64> = (0..spec.m).map(|i| dp.value(0, i, x)).collect();
    let actions: Vec<usize> = (0..spec.m).map(|i| dp.action(0, i, x)).collect();
    run.write_with("tables/value_surface.csv", |w| dp.write_csv(w))?;
    run.write_with("tables/action_boundary.csv", |w| write_action_boundary(&dp, w))?;
    let mut pass = true;

    run.say(format!(
        "{} at (t0 = {}, x = {x}), {} nodes",
        spec.name, grid.t0, lattice.nodes
    ));
    run.say(format!("{:<6} {:>14} {:>8}", "mode", "value", "action"));
    for i in 0..spec.m {
        let a = match actions[i] {
            0 => "cont".to_string(),
            j => format!("->{j}"),
        };
        run.say(format!("{:<6} {:>14.8} {:>8}", i + 1, values[i], a));
    }

    let enumeration = if o.enumerate {
        let tiny = TimeGrid::new(grid.t0, grid.horizon, o.enumerate_steps).map_err(runtime)?;
        let coarse = lattice_for(&run, &tiny, x, o.enumerate_nodes)?;
        let small = solve_switching_dp(&spec, &coarse, &tiny).map_err(oracle_failure)?;
        let en = enumerate_strategies_small(&spec, &coarse, &tiny, x).map_err(oracle_failure)?;
        let dp_value: Vec<f64> = (0..spec.m).map(|i| small.value(0, i, x)).collect();
        let max_abs_diff = dp_value
            .iter()
            .zip(&en.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let ok = max_abs_diff <= 1e-10;
        pass &= ok;
        run.say(format!(
            "enumeration (K = {}, {} nodes): max |DP - enumeration| = {max_abs_diff:.3e} {}",
            o.enumerate_steps,
            o.enumerate_nodes,
            if ok { "pass" } else { "FAIL" }
        ));
        Some(EnumerationCheck {
            steps: o.enumerate_steps,
            nodes: o.enumerate_nodes,
            dp_value,
            enumeration: en,
            max_abs_diff,
            pass: ok,
        })
    } else {
        None
    };

    let mut strategies = Vec::new();
    if o.evaluate_paths > 0 {
        let seed = substream(run.config.simulate.seed, STREAM_EVALUATE);
        let bundle = simulate(&spec, &grid, &[x], o.evaluate_paths, seed).map_err(runtime)?;
        for (i, v) in values.iter().enumerate() {
            let payoff = evaluate_strategy(&spec, &dp, &bundle, i).map_err(oracle_failure)?;
            let dominated = payoff.mean <= v + 3.0 * payoff.std_err;
            pass &= dominated;
            run.say(format!(
                "mode {} table payoff {:.6} +/- {:.6} (DP {v:.6})",
                i + 1,
                payoff.mean,
                payoff.std_err
            ));
            strategies.push(StrategyCheck {
                mode: i + 1,
                payoff,
                dp_value: *v,
                dominated,
            });
        }
    }

    let comparison = match &o.compare {
        Some(path) => {
            let c = compare(path, &dp, &spec, o.tolerance)?;
            pass &= c.pass;
            let rows: Vec<(usize, f64, f64, f64)> = (0..spec.m)
                .map(|i| (i + 1, c.solver_y0[i], c.dp_value[i], c.abs_diff[i]))
                .collect();
            run.write_with("tables/oracle_comparison.csv", |w| {
                writeln!(w, "mode,solver_y0,dp_value,abs_diff")?;
                for (i, a, b, d) in &rows {
                    writeln!(w, "{i},{a},{b},{d}")?;
                }
                Ok(())
            })?;
            run.say(format!(
                "{:<6} {:>14} {:>14} {:>10}",
                "mode", "solver Y0", "DP", "|diff|"
            ));
            for (i, a, b, d) in &rows {
                run.say(format!("{i:<6} {a:>14.8} {b:>14.8} {d:>10.2e}"));
            }
            run.say(format!(
                "comparison (tolerance {}): {}",
                o.tolerance,
                if c.pass { "pass" } else { "FAIL" }
            ));
            Some(c)
        }
        None => None,
    };

    let output = OracleOutput {
        t0: grid.t0,
        x,
        lattice,
        values,
        actions,
        enumeration,
        strategies,
        comparison,
        pass,
    };
    run.write_json("reports/oracle.json", &output)?;
    run.finish(Command::Oracle, pass, None)
}

fn compare(path: &Path, dp: &SwitchingValue, spec: &ProblemSpec, tolerance: f64) -> Result<Comparison, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("oracle.compare: cannot read {}: {e}", path.display())))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("oracle.compare: {}: {e}", path.display())))?;
    let sol = manifest
        .solution
        .ok_or_else(|| Failure::Config(format!("oracle.compare: {} is not a solve manifest", path.display())))?;
    if sol.y0.len() != spec.m || sol.x0.len() != 1 {
        return Err(Failure::Config(
            "oracle.compare: manifest dimensions do not match the problem".into(),
        ));
    }
    if sol.grid != dp.grid {
        return Err(Failure::Config(format!(
            "oracle.compare: manifest grid {:?} differs from oracle grid {:?}",
            sol.grid, dp.grid
        )));
    }
    let x0 = sol.x0[0];
    let dp_value: Vec<f64> = (0..spec.m).map(|i| dp.value(0, i, x0)).collect();
    let abs_diff: Vec<f64> = sol.y0.iter().zip(&dp_value).map(|(a, b)| (a - b).abs()).collect();
    let pass = abs_diff.iter().all(|d| *d <= tolerance);
    Ok(Comparison {
        manifest: path.to_path_buf(),
        x0,
        solver_y0: sol.y0,
        dp_value,
        abs_diff,
        tolerance,
        pass,
    })
}
