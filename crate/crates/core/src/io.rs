//! Output files and their readers. Every file is written to a temporary name
//! in the target directory and renamed into place, so an interrupted run
//! never leaves a partial file under the final name.
//!
//! Numbers are printed with `Display`, the shortest text that parses back to
//! the same `f64`, so a reload is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::coupler::{SolveReport, Solution};
use crate::error::{Error, Result};
use crate::estimates::BoundCheck;
use crate::hjb::FieldPath;
use crate::measures::ControlMeasure;
use crate::model::{ModelConstants, ModelSpec};
use crate::particles::{OracleReport, ParticleEnsemble};

pub const U_FILE: &str = "u.csv";
pub const M_FILE: &str = "m.csv";
pub const MU_FILE: &str = "mu.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CHECKS_CSV: &str = "checks.csv";
pub const CHECKS_JSON: &str = "checks.json";
pub const PARTICLES_JSON: &str = "particles.json";
pub const SNAPSHOTS_CSV: &str = "particles.csv";

pub const U_HEADER: &str = "t,x,u";
pub const M_HEADER: &str = "t,x,m";
pub const MU_HEADER: &str = "t,x,alpha,w";
pub const CHECKS_HEADER: &str = "name,anchor,lhs,rhs,tolerance,margin,satisfied";
pub const SNAPSHOTS_HEADER: &str = "t,particle_id,x,alive";

/// Write `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp: PathBuf = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn field_csv(header: &str, spec: &ModelSpec, field: &FieldPath) -> String {
    let nodes = spec.grid.nodes();
    let mut s = String::with_capacity(32 * field.len() * nodes.len());
    s.push_str(header);
    s.push('\n');
    for (k, level) in field.values.iter().enumerate() {
        let t = spec.mesh.time(k);
        for (x, v) in nodes.iter().zip(level) {
            let _ = writeln!(s, "{t},{x},{v}");
        }
    }
    s
}

fn mu_csv(spec: &ModelSpec, mu: &[ControlMeasure]) -> String {
    let mut s = String::new();
    s.push_str(MU_HEADER);
    s.push('\n');
    for (k, m) in mu.iter().enumerate() {
        let t = spec.mesh.time(k);
        for i in 0..m.x.len() {
            let _ = writeln!(s, "{t},{},{},{}", m.x[i], m.alpha[i], m.w[i]);
        }
    }
    s
}

/// Outcome recorded in `report.json`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    NonConvergence,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveFailure {
    pub message: String,
    /// Sup changes of the failing stage, when the failure is non-convergence.
    pub residuals: Vec<f64>,
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub status: SolveStatus,
    pub config: ExperimentConfig,
    pub constants: ModelConstants,
    pub report: Option<SolveReport>,
    pub failure: Option<SolveFailure>,
}

/// Solution CSVs plus `report.json`.
pub fn write_solution(dir: &Path, config: &ExperimentConfig, spec: &ModelSpec, solution: &Solution) -> Result<()> {
    write_atomic(&dir.join(U_FILE), field_csv(U_HEADER, spec, &solution.u).as_bytes())?;
    write_atomic(&dir.join(M_FILE), field_csv(M_HEADER, spec, &solution.m).as_bytes())?;
    write_atomic(&dir.join(MU_FILE), mu_csv(spec, &solution.mu).as_bytes())?;
    write_json(
        &dir.join(REPORT_FILE),
        &RunReport {
            schema_version: SCHEMA_VERSION,
            status: SolveStatus::Converged,
            config: config.clone(),
            constants: spec.constants,
            report: Some(solution.report.clone()),
            failure: None,
        },
    )
}

/// `report.json` for a run that produced no solution.
pub fn write_failure(dir: &Path, config: &ExperimentConfig, spec: &ModelSpec, error: &Error) -> Result<()> {
    let (status, residuals, scale) = match innermost(error) {
        Error::NonConvergence { scale, residuals, .. } => (SolveStatus::NonConvergence, residuals.clone(), Some(*scale)),
        _ => (SolveStatus::Failed, Vec::new(), None),
    };
    write_json(
        &dir.join(REPORT_FILE),
        &RunReport {
            schema_version: SCHEMA_VERSION,
            status,
            config: config.clone(),
            constants: spec.constants,
            report: None,
            failure: Some(SolveFailure {
                message: error.to_string(),
                residuals,
                scale,
            }),
        },
    )
}

/// The error beneath any sweep wrappers.
pub fn innermost(error: &Error) -> &Error {
    match error {
        Error::Sweep { source, .. } => innermost(source),
        e => e,
    }
}

pub fn checks_csv(checks: &[BoundCheck]) -> String {
    let mut s = String::new();
    s.push_str(CHECKS_HEADER);
    s.push('\n');
    for c in checks {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            c.name,
            csv_text(&c.anchor),
            c.lhs,
            c.rhs,
            c.tolerance,
            c.margin,
            c.satisfied
        );
    }
    s
}

/// Quote a field when it contains a separator or a quote.
pub fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChecksReport {
    pub schema_version: u32,
    pub all_satisfied: bool,
    pub checks: Vec<BoundCheck>,
}

pub fn write_checks(dir: &Path, checks: &[BoundCheck]) -> Result<()> {
    write_atomic(&dir.join(CHECKS_CSV), checks_csv(checks).as_bytes())?;
    write_json(
        &dir.join(CHECKS_JSON),
        &ChecksReport {
            schema_version: SCHEMA_VERSION,
            all_satisfied: checks.iter().all(|c| c.satisfied),
            checks: checks.to_vec(),
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticlesFile {
    pub schema_version: u32,
    pub oracle: OracleReport,
}

pub fn write_particles(dir: &Path, report: &OracleReport) -> Result<()> {
    write_json(
        &dir.join(PARTICLES_JSON),
        &ParticlesFile {
            schema_version: SCHEMA_VERSION,
            oracle: report.clone(),
        },
    )
}

/// Snapshot table `t,particle_id,x,alive`; absorbed particles have an empty
/// `x`.
pub fn write_snapshots(path: &Path, snapshots: &[ParticleEnsemble]) -> Result<()> {
    let mut s = String::new();
    s.push_str(SNAPSHOTS_HEADER);
    s.push('\n');
    for snap in snapshots {
        for (id, x) in snap.positions.iter().enumerate() {
            match x {
                Some(x) => {
                    let _ = writeln!(s, "{},{id},{x},true", snap.t);
                }
                None => {
                    let _ = writeln!(s, "{},{id},,false", snap.t);
                }
            }
        }
    }
    write_atomic(path, s.as_bytes())
}

/// A solution directory loaded back into memory.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub config: ExperimentConfig,
    pub spec: ModelSpec,
    pub solution: Solution,
}

fn corrupt(file: &str, what: impl std::fmt::Display) -> Error {
    Error::Corrupt(format!("{file}: {what}"))
}

/// Parse a nodal table with columns `t,x,<values...>` checked against the
/// grid and mesh; returns the value columns level by level.
fn read_table(dir: &Path, file: &str, header: &str, spec: &ModelSpec) -> Result<Vec<Vec<Vec<f64>>>> {
    let path = dir.join(file);
    let text = fs::read_to_string(&path).map_err(|e| corrupt(file, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(corrupt(file, format!("expected header `{header}`")));
    }
    let width = header.split(',').count();
    let (n_levels, n_nodes) = (spec.mesh.n_levels(), spec.grid.n_nodes());
    let mut out = vec![vec![Vec::with_capacity(n_nodes); width - 2]; n_levels];
    let mut count = 0usize;
    for (row, line) in lines.enumerate() {
        let (k, i) = (row / n_nodes, row % n_nodes);
        if k >= n_levels {
            return Err(corrupt(file, format!("more than {} rows", n_levels * n_nodes)));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(corrupt(file, format!("row {} has {} fields", row + 2, fields.len())));
        }
        let mut nums = Vec::with_capacity(width);
        for f in &fields {
            let v: f64 = f
                .parse()
                .map_err(|_| corrupt(file, format!("row {}: cannot parse `{f}`", row + 2)))?;
            nums.push(v);
        }
        let (t, x) = (spec.mesh.time(k), spec.grid.node(i));
        if (nums[0] - t).abs() > 1e-9 * (1.0 + t.abs()) || (nums[1] - x).abs() > 1e-9 * (1.0 + x.abs()) {
            return Err(corrupt(file, format!("row {} is not at (t, x) = ({t}, {x})", row + 2)));
        }
        for (c, v) in nums[2..].iter().enumerate() {
            out[k][c].push(*v);
        }
        count += 1;
    }
    if count != n_levels * n_nodes {
        return Err(corrupt(file, format!("expected {} rows, found {count}", n_levels * n_nodes)));
    }
    Ok(out)
}

pub fn read_report(dir: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(dir.join(REPORT_FILE)).map_err(|e| corrupt(REPORT_FILE, e))?;
    let report: RunReport = serde_json::from_str(&text).map_err(|e| corrupt(REPORT_FILE, e))?;
    if report.schema_version != SCHEMA_VERSION {
        return Err(corrupt(REPORT_FILE, format!("unsupported schema_version {}", report.schema_version)));
    }
    Ok(report)
}

/// Load a converged run written by [`write_solution`].
pub fn read_solution(dir: &Path) -> Result<LoadedRun> {
    let report = read_report(dir)?;
    let solve_report = match (report.status, report.report) {
        (SolveStatus::Converged, Some(r)) => r,
        _ => return Err(corrupt(REPORT_FILE, "run did not converge; no solution to load")),
    };
    let spec = ModelSpec::new(&report.config.model)?;
    let column = |table: Vec<Vec<Vec<f64>>>, c: usize| FieldPath {
        values: table.into_iter().map(|mut cols| std::mem::take(&mut cols[c])).collect(),
    };
    let u = column(read_table(dir, U_FILE, U_HEADER, &spec)?, 0);
    let m = column(read_table(dir, M_FILE, M_HEADER, &spec)?, 0);
    let nodes = spec.grid.nodes();
    let mu = read_table(dir, MU_FILE, MU_HEADER, &spec)?
        .into_iter()
        .map(|mut cols| ControlMeasure {
            x: nodes.clone(),
            alpha: std::mem::take(&mut cols[0]),
            w: std::mem::take(&mut cols[1]),
        })
        .collect();
    Ok(LoadedRun {
        config: report.config,
        spec,
        solution: Solution {
            u,
            m,
            mu,
            report: solve_report,
        },
    })
}
