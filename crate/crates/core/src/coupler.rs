//! Outer solver: damped Picard iteration on `(u, m)` along a continuation
//! schedule in the stage parameter (`lambda` or `theta`).
//!
//! One sweep applies the map
//!
//! 1. `m_bar = restrict_normalize(m_tilde)` at each level,
//! 2. `mu_tilde` from `(D u_tilde, m_bar)`,
//! 3. forward equation with the controls of `mu_tilde`,
//! 4. `mu_bar` from `(D u_tilde, m)` for `P1`; `P2` reuses `mu_tilde`,
//! 5. backward equation with `mu_bar` and terminal data `g(m(T))`,
//!
//! and blends the result into the iterate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp::fp_solve;
use crate::hjb::{hjb_solve, FieldPath};
use crate::measures::{ControlMeasure, DiscreteMeasure};
use crate::model::{ModelConfig, ModelSpec, Problem, Stage};
use crate::mu_fixed_point::{
    fixed_point_residual, solve_stage_mu, MuSolveReport, DEFAULT_MAX_ITER_MU, DEFAULT_TOL_MU,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub problem: Problem,
    #[serde(default = "default_tol_outer")]
    pub tol_outer: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_continuation")]
    pub continuation_steps: Vec<f64>,
    #[serde(default = "default_tol_mu")]
    pub tol_mu: f64,
    #[serde(default = "default_max_iter_mu")]
    pub max_iter_mu: usize,
}

fn default_tol_outer() -> f64 {
    1e-8
}
fn default_max_outer() -> usize {
    500
}
fn default_damping() -> f64 {
    0.5
}
fn default_continuation() -> Vec<f64> {
    vec![0.25, 0.5, 0.75, 1.0]
}
fn default_tol_mu() -> f64 {
    DEFAULT_TOL_MU
}
fn default_max_iter_mu() -> usize {
    DEFAULT_MAX_ITER_MU
}

impl SolverConfig {
    pub fn new(problem: Problem) -> Self {
        Self {
            problem,
            tol_outer: default_tol_outer(),
            max_outer: default_max_outer(),
            damping: default_damping(),
            continuation_steps: default_continuation(),
            tol_mu: default_tol_mu(),
            max_iter_mu: default_max_iter_mu(),
        }
    }

    pub fn for_spec(spec: &ModelSpec) -> Self {
        Self::new(spec.problem())
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.problem != spec.problem() {
            return Err(Error::Config(format!(
                "solver problem {:?} does not match the {} model",
                self.problem,
                spec.variant.name()
            )));
        }
        let steps = &self.continuation_steps;
        if steps.is_empty() {
            return Err(Error::Config("continuation_steps must be nonempty".into()));
        }
        if steps.iter().any(|s| !(0.0..=1.0).contains(s)) || steps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("continuation_steps must increase within [0,1]".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("damping must lie in (0,1], got {}", self.damping)));
        }
        if !(self.tol_outer > 0.0 && self.tol_mu > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.max_outer == 0 {
            return Err(Error::Config("max_outer must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub scale: f64,
    /// Sweeps that moved the iterate by more than `tol_outer`.
    pub iterations: usize,
    /// Sup-norm change of `(u, m)` after each sweep.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuSummary {
    pub max_iterations: usize,
    pub max_observed_ratio: f64,
    pub max_final_delta: f64,
    /// Largest `|alpha + D(p, Z)|` over levels and atoms.
    pub max_fixed_point_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub stages: Vec<StageReport>,
    pub total_sweeps: usize,
    pub mu: MuSummary,
    pub mu_levels: Vec<MuSolveReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub u: FieldPath,
    pub m: FieldPath,
    pub mu: Vec<ControlMeasure>,
    pub report: SolveReport,
}

impl Solution {
    /// Control field at each level.
    pub fn alpha(&self) -> FieldPath {
        FieldPath {
            values: self.mu.iter().map(|mu| mu.alpha.clone()).collect(),
        }
    }

    pub fn scale(&self) -> f64 {
        self.report.stages.last().map_or(1.0, |s| s.scale)
    }
}

/// Solve the control fixed point at every level from gradients `p` and
/// densities `m` (atoms on the nodes).
pub fn solve_mu_path(
    stage: &Stage,
    p: &FieldPath,
    m: &FieldPath,
    normalize: bool,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<(ControlMeasure, MuSolveReport)>> {
    let grid = &stage.spec.grid;
    p.values
        .par_iter()
        .zip(m.values.par_iter())
        .map(|(pk, mk)| {
            let mut meas = DiscreteMeasure::from_density(grid, mk)?;
            if normalize {
                meas = meas.restrict_normalize();
            }
            solve_stage_mu(stage, pk, &meas, tol, max_iter)
        })
        .collect()
}

/// The undamped map `(u_tilde, m_tilde) -> (u, m)`.
pub fn psi_map(stage: &Stage, config: &SolverConfig, u_tilde: &FieldPath, m_tilde: &FieldPath) -> Result<(FieldPath, FieldPath)> {
    let spec = stage.spec;
    let p = u_tilde.gradients(&spec.grid);
    let mu_tilde: Vec<ControlMeasure> = solve_mu_path(stage, &p, m_tilde, true, config.tol_mu, config.max_iter_mu)?
        .into_iter()
        .map(|(mu, _)| mu)
        .collect();
    let alpha = FieldPath {
        values: mu_tilde.iter().map(|mu| mu.alpha.clone()).collect(),
    };
    let m = fp_solve(spec, &stage.initial_density(), &alpha)?;
    let mu_bar = match stage.problem() {
        Problem::P1 => solve_mu_path(stage, &p, &m, false, config.tol_mu, config.max_iter_mu)?
            .into_iter()
            .map(|(mu, _)| mu)
            .collect(),
        Problem::P2 => mu_tilde,
    };
    let terminal = stage.terminal(&m.values[spec.mesh.n_steps])?;
    let u = hjb_solve(stage, &terminal, &mu_bar, &m)?;
    Ok((u, m))
}

fn blend(old: &mut FieldPath, fresh: &FieldPath, damping: f64) -> f64 {
    let mut change = 0.0f64;
    for (a, b) in old.values.iter_mut().flatten().zip(fresh.values.iter().flatten()) {
        let next = (1.0 - damping) * *a + damping * b;
        change = change.max((next - *a).abs());
        *a = next;
    }
    change
}

/// Final fields from the converged iterate. The blend only satisfies the
/// initial and terminal data and the mass balance up to `tol_outer`, so the
/// density is re-propagated with the converged controls, `u` is re-solved
/// from `g(m(T))`, and the controls are taken from the result.
fn finish(stage: &Stage, config: &SolverConfig, u: FieldPath, m: FieldPath, stages: Vec<StageReport>) -> Result<Solution> {
    let spec = stage.spec;
    let controls = |u: &FieldPath, m: &FieldPath| {
        solve_mu_path(stage, &u.gradients(&spec.grid), m, false, config.tol_mu, config.max_iter_mu)
    };
    let alpha = FieldPath {
        values: controls(&u, &m)?.into_iter().map(|(mu, _)| mu.alpha).collect(),
    };
    let m = fp_solve(spec, &stage.initial_density(), &alpha)?;
    let mu_bar: Vec<ControlMeasure> = controls(&u, &m)?.into_iter().map(|(mu, _)| mu).collect();
    let u = hjb_solve(stage, &stage.terminal(&m.values[spec.mesh.n_steps])?, &mu_bar, &m)?;
    let p = u.gradients(&spec.grid);
    let solved = controls(&u, &m)?;
    let mut summary = MuSummary {
        max_iterations: 0,
        max_observed_ratio: 0.0,
        max_final_delta: 0.0,
        max_fixed_point_residual: 0.0,
    };
    let mut mu = Vec::with_capacity(solved.len());
    let mut mu_levels = Vec::with_capacity(solved.len());
    for ((measure, rep), pk) in solved.into_iter().zip(&p.values) {
        summary.max_iterations = summary.max_iterations.max(rep.iterations);
        summary.max_observed_ratio = summary.max_observed_ratio.max(rep.observed_ratio);
        summary.max_final_delta = summary.max_final_delta.max(rep.final_delta);
        summary.max_fixed_point_residual = summary
            .max_fixed_point_residual
            .max(fixed_point_residual(stage, pk, &measure));
        mu.push(measure);
        mu_levels.push(rep);
    }
    let total_sweeps = stages.iter().map(|s| s.residuals.len()).sum();
    Ok(Solution {
        u,
        m,
        mu,
        report: SolveReport {
            stages,
            total_sweeps,
            mu: summary,
            mu_levels,
        },
    })
}

/// One damped application of the map at `scale`, starting from `state`.
pub fn picard_sweep(spec: &ModelSpec, config: &SolverConfig, scale: f64, state: &Solution) -> Result<Solution> {
    config.validate(spec)?;
    let stage = Stage::new(spec, scale)?;
    state.u.check_shape(&spec.mesh, &spec.grid)?;
    state.m.check_shape(&spec.mesh, &spec.grid)?;
    let (uf, mf) = psi_map(&stage, config, &state.u, &state.m).map_err(|e| Error::Sweep {
        sweep: 1,
        source: Box::new(e),
    })?;
    let (mut u, mut m) = (state.u.clone(), state.m.clone());
    let change = blend(&mut u, &uf, config.damping).max(blend(&mut m, &mf, config.damping));
    let stages = vec![StageReport {
        scale,
        iterations: usize::from(change > config.tol_outer),
        residuals: vec![change],
    }];
    finish(&stage, config, u, m, stages)
}

/// Continuation solve from `u = 0`, `m = 0`.
pub fn solve(spec: &ModelSpec, config: &SolverConfig) -> Result<Solution> {
    let zero = FieldPath::constant(&spec.mesh, &spec.grid, 0.0);
    solve_from(spec, config, zero.clone(), zero)
}

/// Continuation solve from a given initial guess.
pub fn solve_from(spec: &ModelSpec, config: &SolverConfig, mut u: FieldPath, mut m: FieldPath) -> Result<Solution> {
    config.validate(spec)?;
    u.check_shape(&spec.mesh, &spec.grid)?;
    m.check_shape(&spec.mesh, &spec.grid)?;
    let mut stages = Vec::with_capacity(config.continuation_steps.len());
    let mut sweep = 0;
    for &scale in &config.continuation_steps {
        let stage = Stage::new(spec, scale)?;
        let mut residuals = Vec::new();
        loop {
            sweep += 1;
            let (uf, mf) = psi_map(&stage, config, &u, &m).map_err(|e| Error::Sweep {
                sweep,
                source: Box::new(e),
            })?;
            let change = blend(&mut u, &uf, config.damping).max(blend(&mut m, &mf, config.damping));
            residuals.push(change);
            if change <= config.tol_outer {
                break;
            }
            if residuals.len() >= config.max_outer || !change.is_finite() {
                return Err(Error::NonConvergence {
                    scale,
                    iterations: residuals.len(),
                    residuals,
                });
            }
        }
        stages.push(StageReport {
            scale,
            iterations: residuals.len() - 1,
            residuals,
        });
    }
    let stage = Stage::new(spec, *config.continuation_steps.last().unwrap())?;
    finish(&stage, config, u, m, stages)
}

/// Largest pairwise sup distance in `(u, m)` between solutions started from
/// `n_starts` initial guesses: the zero guess and smooth random ones.
pub fn uniqueness_probe(spec: &ModelSpec, config: &SolverConfig, n_starts: usize, seed: u64) -> Result<f64> {
    if n_starts < 2 {
        return Err(Error::Config(format!("uniqueness probe needs at least 2 starts, got {n_starts}")));
    }
    let grid = &spec.grid;
    let amp = spec.terminal_base.iter().fold(0.1f64, |a, v| a.max(v.abs()));
    let starts: Vec<(FieldPath, FieldPath)> = (0..n_starts)
        .map(|j| {
            if j == 0 {
                let zero = FieldPath::constant(&spec.mesh, grid, 0.0);
                return (zero.clone(), zero);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let a: [f64; 2] = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
            let b: [f64; 2] = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
            let s = |x: f64| std::f64::consts::PI * (x - grid.x_lo) / grid.width();
            let u0 = grid.sample(|x| amp * (a[0] * s(x).cos() + a[1] * (2.0 * s(x)).cos()));
            let m0 = grid.sample(|x| 1.0 + b[0] * s(x).cos() + b[1] * (2.0 * s(x)).cos());
            (
                FieldPath {
                    values: vec![u0; spec.mesh.n_levels()],
                },
                FieldPath {
                    values: vec![m0; spec.mesh.n_levels()],
                },
            )
        })
        .collect();
    let solutions: Vec<Solution> = starts
        .into_par_iter()
        .map(|(u0, m0)| solve_from(spec, config, u0, m0))
        .collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    for i in 0..solutions.len() {
        for j in i + 1..solutions.len() {
            let d = solutions[i]
                .u
                .sup_distance(&solutions[j].u)
                .max(solutions[i].m.sup_distance(&solutions[j].m));
            worst = worst.max(d);
        }
    }
    Ok(worst)
}

/// Distance between the solutions started from `u = 0` and from
/// `u = max g`, for the model rescaled to horizon `horizon` with its time
/// step kept.
pub fn short_horizon_probe(model: &ModelConfig, config: &SolverConfig, horizon: f64) -> Result<f64> {
    let mut cfg = model.clone();
    let dt = model.time.horizon / model.time.n_steps as f64;
    cfg.time.horizon = horizon;
    cfg.time.n_steps = ((horizon / dt).round() as usize).max(1);
    let spec = ModelSpec::new(&cfg)?;
    let g_max = spec
        .coupling_g(&spec.initial_density)?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let zero = FieldPath::constant(&spec.mesh, &spec.grid, 0.0);
    let high = FieldPath::constant(&spec.mesh, &spec.grid, g_max);
    let a = solve_from(&spec, config, zero.clone(), zero.clone())?;
    let b = solve_from(&spec, config, high, zero)?;
    Ok(a.u.sup_distance(&b.u).max(a.m.sup_distance(&b.m)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonThreshold {
    /// Largest horizon certified unique by the probe.
    pub t0: f64,
    /// `(horizon, distance)` for every probe evaluated; non-convergent probes
    /// are recorded as infinite distance.
    pub probes: Vec<(f64, f64)>,
}

/// Bisection for the largest horizon in `[t_lo, t_hi]` at which the two-start
/// probe agrees to `10 tol_outer`.
pub fn short_horizon_threshold(
    model: &ModelConfig,
    config: &SolverConfig,
    t_lo: f64,
    t_hi: f64,
    n_bisect: usize,
) -> Result<HorizonThreshold> {
    let tol = 10.0 * config.tol_outer;
    let mut probes = Vec::new();
    let mut eval = |t: f64| -> Result<bool> {
        let d = match short_horizon_probe(model, config, t) {
            Ok(d) => d,
            Err(Error::NonConvergence { .. }) | Err(Error::Sweep { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        probes.push((t, d));
        Ok(d <= tol)
    };
    if !eval(t_lo)? {
        return Err(Error::Config(format!("no uniqueness witness at the lower horizon {t_lo}")));
    }
    if eval(t_hi)? {
        return Ok(HorizonThreshold { t0: t_hi, probes });
    }
    let (mut lo, mut hi) = (t_lo, t_hi);
    for _ in 0..n_bisect {
        let mid = 0.5 * (lo + hi);
        if eval(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(HorizonThreshold { t0: lo, probes })
}
