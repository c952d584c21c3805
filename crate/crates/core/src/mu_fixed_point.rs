//! Per-time-slice fixed point `mu = (I, -D_pH(., p, mu))#m` by plain Banach
//! iteration on the nodal control field.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::measures::{lambda_q, ControlMeasure, DiscreteMeasure};
use crate::model::{ModelSpec, Problem, Stage, Q, Q_PRIME};

pub const DEFAULT_TOL_MU: f64 = 1e-10;
pub const DEFAULT_MAX_ITER_MU: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuSolveReport {
    /// Map applications that changed the iterate by more than the tolerance.
    pub iterations: usize,
    pub final_delta: f64,
    /// Geometric mean of successive delta ratios (0 when fewer than two).
    pub observed_ratio: f64,
    pub lambda_qprime: f64,
    pub lambda_inf: f64,
    /// Right-hand side of the moment bound for `Lambda_q'` at this slice.
    pub moment_bound: f64,
}

/// Iterate `alpha <- -D(p, Z(alpha))` from `alpha0`. Returns the iterate and
/// the delta history.
fn iterate(
    stage: &Stage,
    p: &[f64],
    w: &[f64],
    alpha0: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut alpha = alpha0;
    let mut history = Vec::new();
    for _ in 0..=max_iter {
        let z: f64 = alpha.iter().zip(w).map(|(a, w)| a * w).sum();
        let mut delta = 0.0f64;
        for (a, &pi) in alpha.iter_mut().zip(p) {
            let next = stage.control(pi, z);
            delta = delta.max((next - *a).abs());
            *a = next;
        }
        history.push(delta);
        if delta <= tol {
            return Ok((alpha, history));
        }
    }
    Err(Error::NonContraction { history })
}

fn report(stage: &Stage, p: &[f64], m: &DiscreteMeasure, mu: &ControlMeasure, history: &[f64]) -> MuSolveReport {
    let n = history.len();
    let observed_ratio = if n < 2 || history[0] == 0.0 {
        0.0
    } else {
        (history[n - 1] / history[0]).powf(1.0 / (n - 1) as f64)
    };
    MuSolveReport {
        iterations: n - 1,
        final_delta: history[n - 1],
        observed_ratio,
        lambda_qprime: lambda_q(mu, Q_PRIME),
        lambda_inf: lambda_q(mu, f64::INFINITY),
        moment_bound: moment_bound(stage, p, m),
    }
}

/// Bound on `Lambda_q'(mu)` implied by the structural constants:
///
/// * `P1`: `lambda C0 (1 + |p|_{L^q'(m)}) / (1 - lambda lambda0)`.
/// * `P2`: the square root of
///   `4 C0^2 theta^q' + (q'^(q-1) (2 C0)^q / q) theta^q' |p|^q_{L^q(m)}`.
pub fn moment_bound(stage: &Stage, p: &[f64], m: &DiscreteMeasure) -> f64 {
    let k = stage.spec.constants;
    let s = stage.scale;
    match stage.problem() {
        Problem::P1 => {
            let pn = lq_norm(p, &m.w, stage.spec.q0.max(Q_PRIME));
            s * k.c0 * (1.0 + pn) / (1.0 - s * k.lambda0)
        }
        Problem::P2 => {
            let pq = lq_norm(p, &m.w, Q).powf(Q);
            let c = Q_PRIME.powf(Q - 1.0) * (2.0 * k.c0).powf(Q) / Q;
            let rhs = 4.0 * k.c0 * k.c0 * s.powf(Q_PRIME) + c * s.powf(Q_PRIME) * pq;
            rhs.powf(1.0 / Q_PRIME)
        }
    }
}

/// `|p|_{L^q(m)}`, with `q = inf` taken over atoms of positive weight.
pub fn lq_norm(p: &[f64], w: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        return p
            .iter()
            .zip(w)
            .filter(|(_, &w)| w > 0.0)
            .fold(0.0, |a, (p, _)| a.max(p.abs()));
    }
    p.iter()
        .zip(w)
        .map(|(p, w)| w * p.abs().powf(q))
        .sum::<f64>()
        .powf(1.0 / q)
}

fn check_inputs(p: &[f64], m: &DiscreteMeasure, tol: f64) -> Result<()> {
    check_len(p.len(), m.len())?;
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tol_mu must be positive, got {tol}")));
    }
    Ok(())
}

/// Solve the control fixed point for a stage of either problem, with the
/// gradient field `p` and the state measure `m` given at the same atoms.
pub fn solve_stage_mu(
    stage: &Stage,
    p: &[f64],
    m: &DiscreteMeasure,
    tol: f64,
    max_iter: usize,
) -> Result<(ControlMeasure, MuSolveReport)> {
    check_inputs(p, m, tol)?;
    let (alpha, history) = iterate(stage, p, &m.w, vec![0.0; p.len()], tol, max_iter)?;
    let mu = ControlMeasure {
        x: m.x.clone(),
        alpha,
        w: m.w.clone(),
    };
    let rep = report(stage, p, m, &mu, &history);
    if stage.problem() == Problem::P2 && stage.scale > 0.0 {
        // second start from the far side of the a priori control bound
        let bound = stage
            .spec
            .control_sup_bound(stage.scale, lq_norm(p, &m.w, f64::INFINITY), rep.moment_bound);
        let (other, _) = iterate(stage, p, &m.w, vec![bound; p.len()], tol, max_iter)?;
        let gap = other
            .iter()
            .zip(&mu.alpha)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        if gap > 10.0 * tol {
            return Err(Error::MonotonicityViolation { gap });
        }
    }
    Ok((mu, rep))
}

/// Fixed point of `alpha = -lambda D_pH(p, (I, alpha)#m)` for the quadratic
/// family's `lambda`-scaled system.
pub fn solve_mu(
    spec: &ModelSpec,
    scale: f64,
    p: &[f64],
    m: &DiscreteMeasure,
    tol: f64,
    max_iter: usize,
) -> Result<(ControlMeasure, MuSolveReport)> {
    if spec.problem() != Problem::P1 {
        return Err(Error::UnsupportedVariant(spec.variant.name()));
    }
    solve_stage_mu(&Stage::new(spec, scale)?, p, m, tol, max_iter)
}

/// Fixed point of `alpha = -D_pH^theta(p, (I, alpha)#m)` for the monotone
/// family, with a two-start uniqueness probe.
pub fn solve_mu_monotone(
    spec: &ModelSpec,
    theta: f64,
    p: &[f64],
    m: &DiscreteMeasure,
    tol: f64,
    max_iter: usize,
) -> Result<(ControlMeasure, MuSolveReport)> {
    if spec.problem() != Problem::P2 {
        return Err(Error::UnsupportedVariant(spec.variant.name()));
    }
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::Config(format!("theta must lie in (0,1], got {theta}")));
    }
    solve_stage_mu(&Stage::new(spec, theta)?, p, m, tol, max_iter)
}

/// `sup_i |alpha_i + D(p_i, Z(mu))|`: how far `mu` is from solving its own
/// defining relation.
pub fn fixed_point_residual(stage: &Stage, p: &[f64], mu: &ControlMeasure) -> f64 {
    let z = mu.first_moment();
    mu.alpha
        .iter()
        .zip(p)
        .fold(0.0f64, |a, (al, &pi)| a.max((al - stage.control(pi, z)).abs()))
}
