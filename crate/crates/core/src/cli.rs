//! Command-line front end: `solve`, `verify`, `particles` and `sweep`.
//!
//! Exit codes: 0 success, 1 malformed input or corrupt files, 2 a model
//! rejected by the standing assumptions, 3 a solve that produced no solution
//! (non-convergence or a numerical failure; the report is still written),
//! 4 checks or oracle comparisons outside tolerance.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, SweepPoint, SCHEMA_VERSION};
use crate::coupler::{short_horizon_threshold, solve, Solution, SolverConfig};
use crate::error::{Error, Result};
use crate::estimates::{default_suite, BoundCheck};
use crate::io::{
    csv_text, innermost, read_solution, write_atomic, write_checks, write_failure, write_json, write_particles,
    write_snapshots, write_solution, SNAPSHOTS_CSV,
};
use crate::model::{ModelSpec, Problem};
use crate::particles::{oracle_report, simulate};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_REJECTED: i32 = 2;
pub const EXIT_SOLVE: i32 = 3;
pub const EXIT_TOLERANCE: i32 = 4;

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_HEADER: &str = "point,kappa,horizon,boundary,status,sweeps,check,lhs,rhs,tolerance,margin,satisfied";
pub const THRESHOLD_JSON: &str = "threshold.json";

#[derive(Debug, Parser)]
#[command(name = "mfgc-lab", version, about = "Mean field games of controls on an interval")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "MFGC_LAB_THREADS")]
    pub threads: Option<usize>,
    /// Seed for the random parts (particles); overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the model in CONFIG and write u.csv, m.csv, mu.csv and report.json.
    Solve {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the estimate checks on a solution directory.
    Verify {
        dir: PathBuf,
        /// Where to write checks.csv and checks.json (default: DIR).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the solution with the particle oracle.
    Particles {
        dir: PathBuf,
        /// Number of particles (default: from the config).
        #[arg(long)]
        n: Option<usize>,
        /// Euler-Maruyama substeps per time step (default: from the config).
        #[arg(long)]
        substeps: Option<usize>,
        /// Also write initial and final positions to particles.csv.
        #[arg(long)]
        snapshots: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve and verify every point of the [sweep] grid in CONFIG.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit code for an error.
pub fn exit_code(error: &Error) -> i32 {
    match innermost(error) {
        Error::SpecRejected { .. } => EXIT_REJECTED,
        Error::NonConvergence { .. }
        | Error::NonContraction { .. }
        | Error::MonotonicityViolation { .. }
        | Error::Stability(_)
        | Error::SingularSystem(_) => EXIT_SOLVE,
        _ => EXIT_INPUT,
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_INPUT;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Solve { config, out } => cmd_solve(config, out),
        Command::Verify { dir, out } => cmd_verify(dir, out.as_deref().unwrap_or(dir)),
        Command::Particles {
            dir,
            n,
            substeps,
            snapshots,
            out,
        } => cmd_particles(dir, out.as_deref().unwrap_or(dir), *n, *substeps, cli.seed, *snapshots),
        Command::Sweep { config, out } => cmd_sweep(config, out),
    }
}

pub fn cmd_solve(config_path: &Path, out: &Path) -> Result<i32> {
    let config = ExperimentConfig::load(config_path)?;
    let spec = ModelSpec::new(&config.model)?;
    let solver = config.solver.resolve(&spec);
    solver.validate(&spec)?;
    match solve(&spec, &solver) {
        Ok(solution) => {
            write_solution(out, &config, &spec, &solution)?;
            eprintln!(
                "converged: {} sweeps over {} stages",
                solution.report.total_sweeps,
                solution.report.stages.len()
            );
            Ok(EXIT_OK)
        }
        Err(e) => {
            write_failure(out, &config, &spec, &e)?;
            eprintln!("error: {e}");
            Ok(exit_code(&e))
        }
    }
}

fn suite(config: &ExperimentConfig, spec: &ModelSpec, solution: &Solution) -> Result<Vec<BoundCheck>> {
    let solver = config.solver.resolve(spec);
    let scales = &config.verify.gradient_scales;
    let gradient = (spec.problem() == Problem::P1 && !scales.is_empty()).then_some(scales.as_slice());
    default_suite(solution, spec, &solver, gradient)
}

pub fn cmd_verify(dir: &Path, out: &Path) -> Result<i32> {
    let run = read_solution(dir)?;
    let checks = suite(&run.config, &run.spec, &run.solution)?;
    write_checks(out, &checks)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.satisfied).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        eprintln!("all {} checks satisfied", checks.len());
        Ok(EXIT_OK)
    } else {
        eprintln!("checks outside tolerance: {}", failed.join(", "));
        Ok(EXIT_TOLERANCE)
    }
}

pub fn cmd_particles(
    dir: &Path,
    out: &Path,
    n: Option<usize>,
    substeps: Option<usize>,
    seed: Option<u64>,
    snapshots: bool,
) -> Result<i32> {
    let run = read_solution(dir)?;
    let p = &run.config.particles;
    let n = n.unwrap_or(p.n_particles);
    let substeps = substeps.unwrap_or(p.n_substeps);
    let seed = seed.unwrap_or(p.seed);
    let report = oracle_report(&run.spec, &run.solution, n, substeps, seed)?;
    write_particles(out, &report)?;
    if snapshots {
        let snaps = simulate(&run.spec, &run.solution, n, substeps, seed, &[0, run.spec.mesh.n_steps])?;
        write_snapshots(&out.join(SNAPSHOTS_CSV), &snaps)?;
    }
    if report.within_tolerance {
        eprintln!("particle oracle within tolerance (dstar {} <= {})", report.dstar_final, report.epsilon);
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "particle oracle outside tolerance: dstar {} vs {}, absorbed {} vs {} (slack {})",
            report.dstar_final, report.epsilon, report.absorbed_fraction, report.pde_absorbed_fraction, report.absorbed_slack
        );
        Ok(EXIT_TOLERANCE)
    }
}

/// Result of one sweep point.
struct PointOutcome {
    status: &'static str,
    sweeps: usize,
    last_change: f64,
    checks: Vec<BoundCheck>,
    message: Option<String>,
}

fn run_point(config: &ExperimentConfig, point: &SweepPoint, out: &Path) -> Result<PointOutcome> {
    let mut cfg = config.clone();
    cfg.model = point.model.clone();
    cfg.sweep = None;
    let dir = out.join(format!("point-{:03}", point.index));
    let spec = match ModelSpec::new(&cfg.model) {
        Ok(s) => s,
        Err(e @ Error::SpecRejected { .. }) => {
            return Ok(PointOutcome {
                status: "spec_rejected",
                sweeps: 0,
                last_change: f64::NAN,
                checks: Vec::new(),
                message: Some(e.to_string()),
            })
        }
        Err(e) => return Err(e),
    };
    let solver = cfg.solver.resolve(&spec);
    match solve(&spec, &solver) {
        Ok(solution) => {
            let checks = suite(&cfg, &spec, &solution)?;
            write_json(&dir.join("report.json"), &point_report(&cfg, Some(&solution), None))?;
            write_checks(&dir, &checks)?;
            Ok(PointOutcome {
                status: "converged",
                sweeps: solution.report.total_sweeps,
                last_change: solution.report.stages.last().and_then(|s| s.residuals.last().copied()).unwrap_or(0.0),
                checks,
                message: None,
            })
        }
        Err(e) => {
            write_json(&dir.join("report.json"), &point_report(&cfg, None, Some(&e)))?;
            let (status, sweeps, last) = match innermost(&e) {
                Error::NonConvergence { residuals, .. } => {
                    ("non_convergence", residuals.len(), residuals.last().copied().unwrap_or(f64::NAN))
                }
                _ => ("failed", 0, f64::NAN),
            };
            Ok(PointOutcome {
                status,
                sweeps,
                last_change: last,
                checks: Vec::new(),
                message: Some(e.to_string()),
            })
        }
    }
}

#[derive(Serialize)]
struct PointReport<'a> {
    schema_version: u32,
    config: &'a ExperimentConfig,
    report: Option<&'a crate::coupler::SolveReport>,
    error: Option<String>,
}

fn point_report<'a>(
    config: &'a ExperimentConfig,
    solution: Option<&'a Solution>,
    error: Option<&Error>,
) -> PointReport<'a> {
    PointReport {
        schema_version: SCHEMA_VERSION,
        config,
        report: solution.map(|s| &s.report),
        error: error.map(|e| e.to_string()),
    }
}

#[derive(Serialize)]
struct ThresholdFile {
    schema_version: u32,
    tolerance: f64,
    t0: f64,
    probes: Vec<(f64, f64)>,
}

pub fn cmd_sweep(config_path: &Path, out: &Path) -> Result<i32> {
    let config = ExperimentConfig::load(config_path)?;
    let sweep = config
        .sweep
        .clone()
        .ok_or_else(|| Error::Config("sweep needs a [sweep] table".into()))?;
    let points = sweep.points(&config.model);
    let outcomes: Vec<PointOutcome> = points
        .par_iter()
        .map(|p| run_point(&config, p, out))
        .collect::<Result<_>>()?;
    let mut csv = String::new();
    csv.push_str(SWEEP_HEADER);
    csv.push('\n');
    for (p, o) in points.iter().zip(&outcomes) {
        let prefix = format!("{},{},{},{},{},{}", p.index, p.kappa, p.horizon, p.boundary.name(), o.status, o.sweeps);
        let solver_tol = match ModelSpec::new(&p.model) {
            Ok(spec) => config.solver.resolve(&spec).tol_outer,
            Err(_) => SolverConfig::new(p.model.variant.problem()).tol_outer,
        };
        let converged = o.status == "converged";
        let _ = writeln!(
            csv,
            "{prefix},convergence,{},{solver_tol},0,{},{converged}",
            o.last_change,
            solver_tol - o.last_change
        );
        for c in &o.checks {
            let _ = writeln!(
                csv,
                "{prefix},{},{},{},{},{},{}",
                c.name, c.lhs, c.rhs, c.tolerance, c.margin, c.satisfied
            );
        }
        if let Some(m) = &o.message {
            eprintln!("point {}: {}", p.index, csv_text(m));
        }
    }
    write_atomic(&out.join(SWEEP_CSV), csv.as_bytes())?;
    if let Some(search) = &sweep.short_horizon {
        let spec = ModelSpec::new(&config.model)?;
        let solver = config.solver.resolve(&spec);
        let th = short_horizon_threshold(&config.model, &solver, search.t_lo, search.t_hi, search.bisections)?;
        write_json(
            &out.join(THRESHOLD_JSON),
            &ThresholdFile {
                schema_version: SCHEMA_VERSION,
                tolerance: 10.0 * solver.tol_outer,
                t0: th.t0,
                probes: th.probes,
            },
        )?;
        eprintln!("short-horizon uniqueness certified up to T = {}", th.t0);
    }
    eprintln!("sweep finished: {} points", points.len());
    Ok(EXIT_OK)
}
