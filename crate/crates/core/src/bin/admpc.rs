//! Command-line front end.
//!
//! `admpc <command> <file>` where `<file>` is a scenario path or the name of
//! a built-in (`example1`, `double_integrator`, `microgrid`):
//!
//! - `check`       validate the file and report the detected structure
//! - `solve`       solve one step from the scenario's initial state (JSON)
//! - `simulate`    run the receding-horizon loop (CSV or JSON)
//! - `oracle`      cross-check one step with the brute-force grid search (JSON)
//! - `discretize`  print the discrete-time system matrices (JSON)
//!
//! Diagnostics go to stderr; set `ADMPC_LOG=info` (or `debug`) for progress
//! logging. Exit codes: 0 success, 2 malformed scenario, 3 no uniform sign
//! vector, 4 initial state outside both admissible regions, 5 cone solver
//! failure, 1 anything else.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use admpc::error::{Error, Result};
use admpc::odnp::{check_positive_structure, classify_state, region_violations, RegionLabel};
use admpc::oracle;
use admpc::quadform::{assemble, homogenize};
use admpc::scenario::{self, ScenarioFile};
use admpc::sim::{self, PreparedScenario, Scenario};

/// Slack when screening system matrices for entrywise nonnegativity.
const SYSTEM_SIGN_TOL: f64 = 1e-12;
/// Eigenvalues within this of zero count as zero in the check report.
const EIG_TOL: f64 = 1e-8;

#[derive(Parser)]
#[command(
    name = "admpc",
    version,
    about = "Certified global solutions of sign-structured control problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Write the result to this file instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Output format for `simulate`.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Override the solver's feasibility tolerance.
    #[arg(long, global = true, value_name = "F")]
    feas_tol: Option<f64>,
    /// Override the solver's duality-gap tolerance.
    #[arg(long, global = true, value_name = "G")]
    gap_tol: Option<f64>,
    /// Override the solver's iteration cap.
    #[arg(long, global = true, value_name = "K")]
    max_iter: Option<usize>,
    /// Worker threads for the grid search (0 = all available cores).
    #[arg(long, global = true, value_name = "J", default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a scenario and report the structure the pipeline detects.
    Check { file: String },
    /// Solve one step from the scenario's initial state.
    Solve { file: String },
    /// Run the scenario's receding-horizon loop.
    Simulate { file: String },
    /// Cross-check one step against the brute-force grid search.
    Oracle { file: String },
    /// Print the discrete-time system matrices.
    Discretize { file: String },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("ADMPC_LOG")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Schema(_) => 2,
        Error::NotOdnp(_) => 3,
        Error::NeitherRegion { .. } => 4,
        Error::SolverFailure(_) => 5,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Check { file } => check(load_scenario(file, cli)?, cli),
        Command::Solve { file } => solve(&prepare(load_scenario(file, cli)?)?, cli),
        Command::Simulate { file } => simulate(&prepare(load_scenario(file, cli)?)?, cli),
        Command::Oracle { file } => {
            let doc = scenario::resolve(file)?;
            let prep = prepare(with_overrides(doc.to_scenario()?, cli))?;
            oracle_check(&doc, &prep, cli)
        }
        Command::Discretize { file } => discretize(&load_scenario(file, cli)?, cli),
    }
}

fn load_scenario(file: &str, cli: &Cli) -> Result<Scenario> {
    let doc = scenario::resolve(file)?;
    let sc = with_overrides(doc.to_scenario()?, cli);
    info!(
        "loaded '{file}': {} state(s), {} control(s), horizon {}, {} constraint row(s)",
        sc.system.n_x(),
        sc.system.n_u(),
        sc.horizon,
        sc.constraints.len()
    );
    Ok(sc)
}

fn with_overrides(mut sc: Scenario, cli: &Cli) -> Scenario {
    if let Some(v) = cli.feas_tol {
        sc.solver.feas_tol = v;
    }
    if let Some(v) = cli.gap_tol {
        sc.solver.gap_tol = v;
    }
    if let Some(v) = cli.max_iter {
        sc.solver.max_iter = v;
    }
    sc
}

fn prepare(sc: Scenario) -> Result<PreparedScenario> {
    let prep = PreparedScenario::new(sc)?;
    info!(
        "uniform sign vector {} with {} plus / {} minus region halfspace(s)",
        prep.sigma(),
        prep.regions().plus.len(),
        prep.regions().minus.len()
    );
    Ok(prep)
}

/// Writes `text` to `--out` or stdout.
fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_pretty(value: &serde_json::Value) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("json serialization");
    text.push('\n');
    text
}

fn check(sc: Scenario, cli: &Cli) -> Result<()> {
    let (n, n_x, n_u) = (sc.horizon, sc.system.n_x(), sc.system.n_u());
    let mut out = String::new();
    let _ = writeln!(out, "system: {n_x} state(s), {n_u} control(s), horizon {n}");
    let _ = writeln!(
        out,
        "functions: 1 objective + {} constraint row(s) after expansion",
        sc.constraints.len()
    );
    let _ = writeln!(
        out,
        "system positivity: {}",
        if sc.system.is_positive_within(SYSTEM_SIGN_TOL) {
            "holds (entrywise nonnegative dynamics)"
        } else {
            "does not hold"
        }
    );
    let mut fs = vec![assemble(&sc.objective, n, n_x, n_u)?];
    for c in &sc.constraints {
        fs.push(assemble(c, n, n_x, n_u)?);
    }
    let screen = check_positive_structure(&sc.system, &fs, SYSTEM_SIGN_TOL);
    if screen.holds {
        let _ = writeln!(
            out,
            "all-plus shortcut: applies; the all-ones sign vector works from every \
             nonnegative initial state"
        );
    } else {
        let _ = writeln!(
            out,
            "all-plus shortcut: does not apply ({}); a sign vector must be searched for",
            screen
                .violation
                .as_ref()
                .map(|v| v.to_string())
                .unwrap_or_else(|| "no witness".into())
        );
    }
    let prep = match PreparedScenario::new(sc) {
        Ok(prep) => prep,
        Err(e) => {
            let _ = writeln!(out, "uniform sign vector: none found");
            let _ = writeln!(out, "check failed");
            emit(&cli.out, &out)?;
            return Err(e);
        }
    };
    let _ = writeln!(out, "uniform sign vector: {}", prep.sigma());
    let eigs = prep.condensed()[0].control_quad.clone().symmetric_eigen();
    let (mut neg, mut zero, mut pos) = (0usize, 0usize, 0usize);
    for v in eigs.eigenvalues.iter() {
        if *v < -EIG_TOL {
            neg += 1;
        } else if *v > EIG_TOL {
            pos += 1;
        } else {
            zero += 1;
        }
    }
    let _ = writeln!(
        out,
        "objective coupling eigenvalues: {neg} negative, {zero} zero, {pos} positive \
         (tolerance {EIG_TOL:.0e})"
    );
    for (label, list) in [
        ("plus", &prep.regions().plus),
        ("minus", &prep.regions().minus),
    ] {
        let _ = writeln!(out, "{label} region: {} halfspace(s)", list.len());
        for h in list {
            let _ = writeln!(out, "  {h}");
        }
    }
    let region = classify_state(&prep.scenario.x0, prep.regions());
    let _ = writeln!(
        out,
        "initial state: {}",
        match region {
            RegionLabel::Both => "inside both regions".to_string(),
            RegionLabel::Neither => "inside neither region (one step would fail)".to_string(),
            other => format!("inside the {other} region"),
        }
    );
    let _ = writeln!(out, "check passed");
    emit(&cli.out, &out)
}

fn solve(prep: &PreparedScenario, cli: &Cli) -> Result<()> {
    let sol = sim::solve_step(prep, &prep.scenario.x0)?;
    info!(
        "solved in {} iteration(s), {:.3} ms; certificate exact: {}",
        sol.iterations, sol.solve_ms, sol.certificate.exact
    );
    let n_x = prep.scenario.system.n_x();
    let predicted: Vec<Vec<f64>> = (0..=prep.scenario.horizon)
        .map(|k| sol.predicted.rows(k * n_x, n_x).iter().copied().collect())
        .collect();
    let doc = serde_json::json!({
        "objective": sol.objective,
        "u": sol.u.iter().copied().collect::<Vec<f64>>(),
        "region": sol.region.to_string(),
        "sigma_bar": sol.sigma_bar.as_slice(),
        "certificate": {
            "exact": sol.certificate.exact,
            "max_violation": sol.certificate.max_violation,
            "gap": sol.certificate.gap,
            "point_objective": sol.certificate.point_objective,
            "relaxation_objective": sol.certificate.relaxation_objective,
        },
        "iterations": sol.iterations,
        "solver_message": sol.solver_message,
        "solve_ms": sol.solve_ms,
        "predicted_states": predicted,
    });
    emit(&cli.out, &to_pretty(&doc))
}

fn simulate(prep: &PreparedScenario, cli: &Cli) -> Result<()> {
    let traj = sim::receding_horizon(prep, prep.scenario.steps);
    info!(
        "simulated {} round(s){}",
        traj.records.len(),
        match &traj.failure {
            Some(f) => format!(", failed at round {}", f.step),
            None => String::new(),
        }
    );
    let text = match cli.format {
        Format::Csv => traj.to_csv(),
        Format::Json => to_pretty(&traj.to_json()),
    };
    emit(&cli.out, &text)?;
    match traj.failure {
        Some(f) => Err(f.error),
        None => Ok(()),
    }
}

fn oracle_check(doc: &ScenarioFile, prep: &PreparedScenario, cli: &Cli) -> Result<()> {
    let x0 = &prep.scenario.x0;
    if classify_state(x0, prep.regions()) == RegionLabel::Neither {
        let (plus_violated, minus_violated) = region_violations(x0, prep.regions());
        return Err(Error::NeitherRegion {
            plus_violated,
            minus_violated,
        });
    }
    let family = homogenize(prep.condensed(), x0)?;
    let bounds = match doc.oracle.as_ref().and_then(|o| o.search_box.as_ref()) {
        Some(bx) => bx.iter().map(|pair| (pair[0], pair[1])).collect(),
        None => oracle::derive_box(&family)?,
    };
    let schedule = doc
        .oracle
        .as_ref()
        .and_then(|o| o.schedule.as_ref())
        .map(|s| s.to_schedule())
        .unwrap_or_default();
    info!(
        "grid search over {} axes, {} round(s), {} job(s)",
        bounds.len(),
        schedule.rounds,
        cli.jobs
    );
    let result = oracle::brute_force(&family, &bounds, &schedule, cli.jobs)?;
    let doc = serde_json::json!({
        "best_u": result.best_u.iter().copied().collect::<Vec<f64>>(),
        "objective": result.objective,
        "feasible_samples": result.feasible_samples,
        "round_objectives": result.round_objectives,
        "box": bounds.iter().map(|(lo, hi)| vec![*lo, *hi]).collect::<Vec<_>>(),
        "schedule": {
            "initial_points": result.schedule.initial_points,
            "rounds": result.schedule.rounds,
            "keep": result.schedule.keep,
            "refine_factor": result.schedule.refine_factor,
            "local_points": result.schedule.local_points,
        },
        "certified_bound": result.certified_bound,
    });
    emit(&cli.out, &to_pretty(&doc))
}

fn discretize(sc: &Scenario, cli: &Cli) -> Result<()> {
    let matrix_rows = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| m.row(i).iter().copied().collect())
            .collect()
    };
    let doc = serde_json::json!({
        "a": matrix_rows(&sc.system.a),
        "b": matrix_rows(&sc.system.b),
    });
    emit(&cli.out, &to_pretty(&doc))
}
