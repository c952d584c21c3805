//! Checks of the a priori estimates and identities against a computed
//! solution. Every check is a pure function of its inputs and reports the two
//! sides of an inequality together with the discretization slack it allows.
//!
//! Constants come from the model's declared [`ModelConstants`], never from
//! fitted values.
//!
//! [`ModelConstants`]: crate::model::ModelConstants

use serde::{Deserialize, Serialize};

use crate::coupler::{solve, Solution, SolverConfig};
use crate::error::{Error, Result};
use crate::grid::Boundary;
use crate::hjb::FieldPath;
use crate::measures::{lambda_q, DiscreteMeasure};
use crate::model::{ModelSpec, Problem, Stage, Q, Q_PRIME};
use crate::mu_fixed_point::{lq_norm, moment_bound};

/// Slack constant `C` in the additive `C (h^2 + dt)` allowance of the maximum
/// principle. Frozen from the decoupled runs.
pub const C_MAX_PRINCIPLE: f64 = 1.0;

/// Constant `C_id` of the energy identity allowance `C_id (h^2 + dt)`: ten
/// times the worst ratio `residual / (h^2 + dt)` observed on the decoupled
/// quadratic calibration run (`kappa = 0`).
pub const C_ID: f64 = 0.4;

/// Slack constant on `h^2` in the duality defect.
pub const C_DUALITY: f64 = 5.0;

/// Relative band for the gradient scaling law.
pub const GRADIENT_BAND: f64 = 1.25;

/// Mass conservation tolerance under reflection.
pub const NEUMANN_MASS_TOL: f64 = 1e-10;

/// Per-step tolerance on mass increase under absorption.
pub const DIRICHLET_MASS_STEP_TOL: f64 = 1e-12;

/// One evaluated inequality `lhs <= rhs + tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    /// The estimate being checked, in words.
    pub anchor: String,
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    /// `rhs - lhs`.
    pub margin: f64,
    pub satisfied: bool,
}

impl BoundCheck {
    pub fn new(name: &str, anchor: &str, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            anchor: anchor.to_string(),
            lhs,
            rhs,
            tolerance,
            margin: rhs - lhs,
            satisfied: lhs <= rhs + tolerance,
        }
    }
}

fn discretization(spec: &ModelSpec) -> f64 {
    spec.grid.h * spec.grid.h + spec.mesh.dt
}

fn stage_of<'a>(spec: &'a ModelSpec, solution: &Solution) -> Result<Stage<'a>> {
    solution.u.check_shape(&spec.mesh, &spec.grid)?;
    solution.m.check_shape(&spec.mesh, &spec.grid)?;
    if solution.mu.len() != spec.mesh.n_levels() {
        return Err(Error::Shape {
            expected: spec.mesh.n_levels(),
            got: solution.mu.len(),
        });
    }
    Stage::new(spec, solution.scale())
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// `|u|_inf <= |u(T)|_inf + sum_k dt max_x |H_stage(x, 0, mu_k) - source_k|`.
///
/// The sum runs over the levels the backward steps read (`k >= 1`).
pub fn check_max_principle(solution: &Solution, spec: &ModelSpec) -> Result<BoundCheck> {
    let stage = stage_of(spec, solution)?;
    let mesh = &spec.mesh;
    let lhs = solution.u.sup_norm();
    let mut rhs = sup(&solution.u.values[mesh.n_steps]);
    for k in 1..=mesh.n_steps {
        let z = solution.mu[k].first_moment();
        let source = stage.source(&solution.m.values[k])?;
        let worst = (0..spec.grid.n_nodes())
            .map(|i| (stage.hamiltonian(i, 0.0, z) - source[i]).abs())
            .fold(0.0f64, f64::max);
        rhs += mesh.dt * worst;
    }
    Ok(BoundCheck::new(
        "max_principle",
        "|u| <= |u(T)| + int_t^T sup_x |H(s,x,0,mu(s))| ds",
        lhs,
        rhs,
        1e-6 + C_MAX_PRINCIPLE * discretization(spec),
    ))
}

/// Absolute residual of
/// `int u(T) m(T) - int u(0) m(0) + int int (D_pH . D_xu - H) dm dt = 0`
/// for the stage system.
///
/// The time quadrature follows the staggering of the scheme: the transport
/// term is a left sum (the forward step from `t_k` uses the level-`k`
/// controls) and the Hamiltonian term a right sum (the backward step to `t_k`
/// uses level `k + 1`). With that pairing the time discretization cancels to
/// leading order and the residual measures the spatial consistency of the two
/// solvers.
pub fn energy_residual(solution: &Solution, spec: &ModelSpec) -> Result<f64> {
    let stage = stage_of(spec, solution)?;
    if stage.problem() != Problem::P1 || spec.c_f != 0.0 {
        return Err(Error::UnsupportedVariant(spec.variant.name()));
    }
    let (grid, mesh) = (&spec.grid, &spec.mesh);
    let v = grid.control_volumes();
    let pair = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).zip(&v).map(|((x, y), w)| x * y * w).sum() };
    let n = mesh.n_steps;
    let boundary = pair(&solution.u.values[n], &solution.m.values[n]) - pair(&solution.u.values[0], &solution.m.values[0]);
    let mut bulk = 0.0;
    for k in 0..=n {
        let p = grid.solver_gradient(&solution.u.values[k]);
        let z = solution.mu[k].first_moment();
        let m = &solution.m.values[k];
        if k < n {
            bulk += mesh.dt * (0..p.len()).map(|i| v[i] * m[i] * stage.dp(p[i], z) * p[i]).sum::<f64>();
        }
        if k > 0 {
            bulk -= mesh.dt * (0..p.len()).map(|i| v[i] * m[i] * stage.hamiltonian(i, p[i], z)).sum::<f64>();
        }
    }
    Ok((boundary + bulk).abs())
}

pub fn check_energy_identity(solution: &Solution, spec: &ModelSpec) -> Result<BoundCheck> {
    let lhs = energy_residual(solution, spec)?;
    Ok(BoundCheck::new(
        "energy_identity",
        "int g m(T) - int u(0) m0 + int int (D_pH . D_xu - H) dm dt = 0",
        lhs,
        C_ID * discretization(spec),
        0.0,
    ))
}

/// Observed order `log(r_coarse / r_fine) / log 2` of successive residuals
/// under halving of both `h` and `dt`.
pub fn refinement_orders(residuals: &[f64]) -> Vec<f64> {
    residuals.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// `sup_k |D_xu(k)|_inf`.
pub fn gradient_sup(u: &FieldPath, spec: &ModelSpec) -> f64 {
    u.gradients(&spec.grid).sup_norm()
}

/// Solves at each scale in `scales` and compares `|D_xu|_inf / sqrt(lambda)`
/// (Neumann) or `|D_xu|_inf` (Dirichlet) against its value at `lambda = 1`.
///
/// Each solve uses the configured continuation steps below the target scale
/// followed by the target itself.
pub fn check_gradient_scaling(spec: &ModelSpec, config: &SolverConfig, scales: &[f64]) -> Result<BoundCheck> {
    if spec.problem() != Problem::P1 {
        return Err(Error::UnsupportedVariant(spec.variant.name()));
    }
    if !scales.contains(&1.0) || scales.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
        return Err(Error::Config(format!("gradient scaling needs scales in (0,1] containing 1, got {scales:?}")));
    }
    let neumann = spec.grid.boundary == Boundary::Neumann;
    let mut at_one = 0.0;
    let mut worst = 0.0f64;
    for &scale in scales {
        let mut cfg = config.clone();
        cfg.continuation_steps.retain(|&s| s < scale);
        cfg.continuation_steps.push(scale);
        let sol = solve(spec, &cfg)?;
        let g = gradient_sup(&sol.u, spec);
        let ratio = if neumann { g / scale.sqrt() } else { g };
        if scale == 1.0 {
            at_one = ratio;
        }
        worst = worst.max(ratio);
    }
    let (name, anchor) = if neumann {
        ("gradient_scaling", "|D_xu| <= C lambda^(1/2)")
    } else {
        ("gradient_bound", "|D_xu| <= C uniformly in lambda")
    };
    Ok(BoundCheck::new(name, anchor, worst, GRADIENT_BAND * at_one, 1e-12))
}

/// Moment bounds on the control marginal at every level; one check per bound
/// reporting the level with the smallest margin.
///
/// * `P1`: `Lambda_q~ <= lambda C0 (1 + |p|_{L^max(q0,q~)(m)}) / (1 - lambda lambda0)`
///   for `q~ = q'` and `q~ = inf`.
/// * `P2`: the `Lambda_q'` bound and `Lambda_inf <= C0 theta (1 + |p|_inf + Lambda_q')`.
pub fn check_lambda_bounds(solution: &Solution, spec: &ModelSpec, tol_mu: f64) -> Result<Vec<BoundCheck>> {
    let stage = stage_of(spec, solution)?;
    let grid = &spec.grid;
    let k = spec.constants;
    let s = stage.scale;
    let tol = 2.0 * tol_mu;
    let mut worst: [(f64, f64); 2] = [(0.0, 0.0); 2];
    let mut keep = |slot: usize, lhs: f64, rhs: f64| {
        let (l, r) = worst[slot];
        if lhs - rhs > l - r || (l == 0.0 && r == 0.0) {
            worst[slot] = (lhs, rhs);
        }
    };
    for (level, mu) in solution.mu.iter().enumerate() {
        let p = grid.solver_gradient(&solution.u.values[level]);
        let m = DiscreteMeasure::from_density(grid, &solution.m.values[level])?;
        let lam_q = lambda_q(mu, Q_PRIME);
        let lam_inf = lambda_q(mu, f64::INFINITY);
        match stage.problem() {
            Problem::P1 => {
                let factor = s * k.c0 / (1.0 - s * k.lambda0);
                let pq = lq_norm(&p, &m.w, spec.q0.max(Q_PRIME)).powf(Q - 1.0);
                let pinf = lq_norm(&p, &m.w, f64::INFINITY).powf(Q - 1.0);
                keep(0, lam_q, factor * (1.0 + pq));
                keep(1, lam_inf, factor * (1.0 + pinf));
            }
            Problem::P2 => {
                keep(0, lam_q, moment_bound(&stage, &p, &m));
                let p_sup = lq_norm(&p, &m.w, f64::INFINITY);
                keep(1, lam_inf, spec.control_sup_bound(s, p_sup, lam_q));
            }
        }
    }
    let anchors = match stage.problem() {
        Problem::P1 => [
            "Lambda_q'(mu) <= lambda C0 (1 + |p|^(q-1)_L^max(q0,q')(m)) / (1 - lambda lambda0)",
            "Lambda_inf(mu) <= lambda C0 (1 + |p|^(q-1)_L^inf(m)) / (1 - lambda lambda0)",
        ],
        Problem::P2 => [
            "Lambda_q'(mu)^q' <= 4 C0^2 theta^q' + q'^(q-1) (2 C0)^q theta^q' |p|^q_L^q(m) / q",
            "Lambda_inf(mu) <= C0 theta (1 + |p|_inf + Lambda_q'(mu))",
        ],
    };
    Ok(vec![
        BoundCheck::new("lambda_qprime_bound", anchors[0], worst[0].0, worst[0].1, tol),
        BoundCheck::new("lambda_inf_bound", anchors[1], worst[1].0, worst[1].1, tol),
    ])
}

/// Reflection conserves mass; absorption never creates it.
pub fn check_mass_behavior(solution: &Solution, spec: &ModelSpec) -> Result<BoundCheck> {
    let stage = stage_of(spec, solution)?;
    let v = spec.grid.control_volumes();
    let mass: Vec<f64> = solution
        .m
        .values
        .iter()
        .map(|level| level.iter().zip(&v).map(|(a, b)| a * b).sum())
        .collect();
    if let Some(neg) = solution.m.values.iter().flatten().find(|&&x| x < -1e-12) {
        return Ok(BoundCheck::new("mass_positivity", "m >= 0", -neg, 0.0, 1e-12));
    }
    match spec.grid.boundary {
        Boundary::Neumann => {
            let expected: f64 = stage.initial_density().iter().zip(&v).map(|(a, b)| a * b).sum();
            let dev = mass.iter().fold(0.0f64, |a, m| a.max((m - expected).abs()));
            Ok(BoundCheck::new(
                "mass_conservation",
                "reflected dynamics keep int m(t) = int m0",
                dev,
                0.0,
                NEUMANN_MASS_TOL,
            ))
        }
        Boundary::Dirichlet => {
            let rise = mass.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
            Ok(BoundCheck::new(
                "mass_nonincreasing",
                "absorbed dynamics let mass escape but never enter",
                rise.max(0.0),
                0.0,
                DIRICHLET_MASS_STEP_TOL,
            ))
        }
    }
}

/// `sup |D_aL(x, alpha, mu) + D_xu|` over levels and atoms of positive mass.
pub fn duality_defect(solution: &Solution, spec: &ModelSpec) -> Result<f64> {
    let stage = stage_of(spec, solution)?;
    if stage.problem() != Problem::P2 {
        return Err(Error::UnsupportedVariant(spec.variant.name()));
    }
    if stage.scale == 0.0 {
        return Ok(0.0);
    }
    let scaled = spec.theta_scale(stage.scale);
    let mut worst = 0.0f64;
    for (level, mu) in solution.mu.iter().enumerate() {
        let p = spec.grid.solver_gradient(&solution.u.values[level]);
        for i in 0..mu.x.len() {
            if mu.w[i] > 0.0 {
                let d = scaled.d_alpha_lagrangian(mu.x[i], mu.alpha[i], mu)?;
                worst = worst.max((d + p[i]).abs());
            }
        }
    }
    Ok(worst)
}

pub fn check_duality(solution: &Solution, spec: &ModelSpec, tol_mu: f64) -> Result<BoundCheck> {
    let defect = duality_defect(solution, spec)?;
    let h = spec.grid.h;
    Ok(BoundCheck::new(
        "duality",
        "D_xu = -D_aL(t, x, alpha, mu) on the support of m",
        defect,
        2.0 * tol_mu + C_DUALITY * h * h,
        0.0,
    ))
}

/// `theta` in `(0, 1)` with
/// `lambda1 lambda^q' + C0 lambda2 lambda^(q'+1) < (1 - theta)^(q'-1) (1 - lambda lambda0)^q' / C0^q'`,
/// taken at the midpoint of the admissible interval.
pub fn energy_theta(spec: &ModelSpec, scale: f64) -> Result<f64> {
    let k = spec.constants;
    let need = (k.lambda1 * scale.powf(Q_PRIME) + k.c0 * k.lambda2 * scale.powf(Q_PRIME + 1.0)) * k.c0.powf(Q_PRIME)
        / (1.0 - scale * k.lambda0).powf(Q_PRIME);
    // (1 - theta)^(q'-1) > need
    let upper = 1.0 - need.powf(1.0 / (Q_PRIME - 1.0));
    if !(upper > 0.0) || 1.0 - scale * k.lambda0 <= 0.0 {
        return Err(Error::SpecRejected {
            assumption: "A6",
            message: format!(
                "no theta in (0,1) satisfies the energy constant chain (lambda1 = {}, lambda2 = {}, C0 = {})",
                k.lambda1, k.lambda2, k.c0
            ),
        });
    }
    Ok(0.5 * upper)
}

/// `int int |D_xu|^q dm dt` against
/// `(1 - a (1 - theta)^(1-q'))^-1 (C0^2 (1 + T) + C0 |u|_inf + a theta^(1-q') T)`
/// with `a = lambda1 lambda^q' C0^q' / (1 - lambda lambda0)^q'`.
pub fn check_du_energy(solution: &Solution, spec: &ModelSpec) -> Result<BoundCheck> {
    let stage = stage_of(spec, solution)?;
    if stage.problem() != Problem::P1 || spec.c_f != 0.0 {
        return Err(Error::UnsupportedVariant(spec.variant.name()));
    }
    let (grid, mesh) = (&spec.grid, &spec.mesh);
    let s = stage.scale;
    let theta = energy_theta(spec, s)?;
    let v = grid.control_volumes();
    let per_level: Vec<f64> = solution
        .u
        .values
        .iter()
        .zip(&solution.m.values)
        .map(|(u, m)| {
            let p = grid.solver_gradient(u);
            (0..p.len()).map(|i| v[i] * m[i] * p[i].abs().powf(Q)).sum()
        })
        .collect();
    let lhs: f64 = per_level.windows(2).map(|w| 0.5 * mesh.dt * (w[0] + w[1])).sum();
    let k = spec.constants;
    let t = mesh.horizon;
    let a = k.lambda1 * s.powf(Q_PRIME) * k.c0.powf(Q_PRIME) / (1.0 - s * k.lambda0).powf(Q_PRIME);
    let rhs = (k.c0 * k.c0 * (1.0 + t) + k.c0 * solution.u.sup_norm() + a * theta.powf(1.0 - Q_PRIME) * t)
        / (1.0 - a * (1.0 - theta).powf(1.0 - Q_PRIME));
    Ok(BoundCheck::new(
        "du_energy",
        "int int |D_xu|^q dm dt <= (1 - a (1-theta)^(1-q'))^-1 (C0^2 (1+T) + C0 |u| + a theta^(1-q') T)",
        lhs,
        rhs,
        0.0,
    ))
}

/// The checks that apply to the solution's problem: maximum principle, moment
/// bounds and mass behavior always; the energy identity and the `D_xu`
/// energy bound for the quadratic family; duality for the monotone family.
/// The gradient scaling law needs extra solves and is run only when
/// `gradient_scales` is given.
pub fn default_suite(
    solution: &Solution,
    spec: &ModelSpec,
    config: &SolverConfig,
    gradient_scales: Option<&[f64]>,
) -> Result<Vec<BoundCheck>> {
    let mut checks = vec![check_max_principle(solution, spec)?];
    checks.extend(check_lambda_bounds(solution, spec, config.tol_mu)?);
    checks.push(check_mass_behavior(solution, spec)?);
    match spec.problem() {
        Problem::P1 => {
            checks.push(check_energy_identity(solution, spec)?);
            checks.push(check_du_energy(solution, spec)?);
            if let Some(scales) = gradient_scales {
                checks.push(check_gradient_scaling(spec, config, scales)?);
            }
        }
        Problem::P2 => checks.push(check_duality(solution, spec, config.tol_mu)?),
    }
    Ok(checks)
}
