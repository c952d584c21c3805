//! Monte-Carlo oracle for the forward equation: independent particles
//! following `dX = alpha(t, X) dt + sqrt(2 nu) dB`, absorbed at the boundary
//! (Dirichlet) or reflected back into the interval (Neumann).
//!
//! Each particle owns a ChaCha8 stream selected by its index, so trajectories
//! do not depend on how the particles are split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupler::Solution;
use crate::error::{check_len, Error, Result};
use crate::grid::{integrate, Boundary, Grid1D, TimeMesh};
use crate::hjb::FieldPath;
use crate::measures::{dstar, ControlMeasure, DiscreteMeasure};
use crate::model::ModelSpec;

/// Critical value of the Kolmogorov-Smirnov statistic at level 0.01, to be
/// divided by `sqrt(n)`.
pub const KS_CRITICAL_001: f64 = 1.628;

/// Monte-Carlo part of the tolerance curve: `dstar <= EPS_MC / sqrt(n) + ...`.
/// Three times the worst `dstar sqrt(n)` (0.53) over seeds 1 to 5 of the
/// zero-drift reflected calibration run (standard grid, `n = 10^5`, 4
/// substeps).
pub const EPS_MC: f64 = 1.6;

/// Discretization part of the tolerance curve, multiplying `h^2 + dt`.
pub const EPS_DISC: f64 = 1.0;

/// Constant in the `C (h^2 + dt + sqrt(dt_sub))` slack for absorbed fractions.
pub const C_ABSORBED: f64 = 1.0;

/// Tolerance `eps(n, h, dt)` on `dstar(empirical m(T), m(T))`. Under
/// absorption the endpoint test lets particles survive crossings between
/// substeps, a bias of order `sqrt(dt_sub)` in the surviving mass, which is
/// added with the constant [`C_ABSORBED`].
pub fn tolerance_curve(n: usize, h: f64, dt: f64, dt_sub: f64, boundary: Boundary) -> f64 {
    let base = EPS_MC / (n as f64).sqrt() + EPS_DISC * (h * h + dt);
    match boundary {
        Boundary::Neumann => base,
        Boundary::Dirichlet => base + C_ABSORBED * dt_sub.sqrt(),
    }
}

/// Particle positions at one time level; `None` marks an absorbed particle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub level: usize,
    pub t: f64,
    pub positions: Vec<Option<f64>>,
    pub n_total: usize,
    pub rng_seed: u64,
    /// Mass carried by each particle.
    pub particle_mass: f64,
}

impl ParticleEnsemble {
    pub fn live(&self) -> impl Iterator<Item = f64> + '_ {
        self.positions.iter().flatten().copied()
    }

    pub fn live_fraction(&self) -> f64 {
        self.live().count() as f64 / self.n_total as f64
    }

    pub fn absorbed_fraction(&self) -> f64 {
        1.0 - self.live_fraction()
    }
}

/// Starting law of the particles.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    /// Piecewise-linear density at the grid nodes, sampled exactly by
    /// inverting its cumulative distribution.
    Density(Vec<f64>),
    Point(f64),
}

/// Nodal control field, one row per time level, used as the drift on
/// `[t_k, t_k+1)` and interpolated linearly in space.
#[derive(Debug, Clone)]
pub struct DriftField<'a> {
    pub grid: &'a Grid1D,
    pub mesh: &'a TimeMesh,
    pub nu: f64,
    pub alpha: &'a FieldPath,
}

/// Exact sampler for a piecewise-linear density on the grid.
struct LinearDensitySampler {
    grid: Grid1D,
    density: Vec<f64>,
    cumulative: Vec<f64>,
}

impl LinearDensitySampler {
    fn new(grid: &Grid1D, density: &[f64]) -> Result<Self> {
        check_len(density.len(), grid.n_nodes())?;
        if density.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidMeasure("initial density must be finite and nonnegative".into()));
        }
        let mut cumulative = vec![0.0];
        for j in 0..grid.n_cells {
            let last = cumulative[j];
            cumulative.push(last + 0.5 * grid.h * (density[j] + density[j + 1]));
        }
        if !(cumulative[grid.n_cells] > 0.0) {
            return Err(Error::InvalidMeasure("initial density has zero mass".into()));
        }
        Ok(Self {
            grid: grid.clone(),
            density: density.to_vec(),
            cumulative,
        })
    }

    /// Position with cumulative mass `u * total`, `u` in `[0, 1)`.
    fn quantile(&self, u: f64) -> f64 {
        let n = self.grid.n_cells;
        let target = u * self.cumulative[n];
        let j = self.cumulative[1..].partition_point(|&c| c <= target).min(n - 1);
        let r = target - self.cumulative[j];
        let (a, slope) = (self.density[j], (self.density[j + 1] - self.density[j]) / self.grid.h);
        // solve a s + slope s^2 / 2 = r in the stable form
        let disc = (a * a + 2.0 * slope * r).max(0.0);
        let denom = a + disc.sqrt();
        let s = if denom > 0.0 { 2.0 * r / denom } else { 0.0 };
        self.grid.node(j) + s.clamp(0.0, self.grid.h)
    }
}

/// Fold once across the violated endpoint, then clamp.
fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let y = if x < lo {
        2.0 * lo - x
    } else if x > hi {
        2.0 * hi - x
    } else {
        x
    };
    y.clamp(lo, hi)
}

/// Smallest admissible substep count: `4 sqrt(2 nu dt_sub)` must stay below
/// the interval width so that single folds suffice.
pub fn min_substeps(grid: &Grid1D, mesh: &TimeMesh, nu: f64) -> usize {
    let limit = (grid.width() / 4.0).powi(2) / (2.0 * nu);
    ((mesh.dt / limit).floor() as usize + 1).max(1)
}

/// Simulate `n_particles` independent particles through the drift field and
/// return snapshots at `levels` (sorted, deduplicated).
pub fn simulate_field(
    field: &DriftField,
    initial: &InitialLaw,
    n_particles: usize,
    n_substeps: usize,
    seed: u64,
    levels: &[usize],
) -> Result<Vec<ParticleEnsemble>> {
    let (grid, mesh) = (field.grid, field.mesh);
    field.alpha.check_shape(mesh, grid)?;
    if n_particles == 0 {
        return Err(Error::Config("n_particles must be at least 1".into()));
    }
    if n_substeps < min_substeps(grid, mesh, field.nu) {
        return Err(Error::Config(format!(
            "n_substeps = {n_substeps} lets one step cross a quarter of the interval; need at least {}",
            min_substeps(grid, mesh, field.nu)
        )));
    }
    let mut levels = levels.to_vec();
    levels.sort_unstable();
    levels.dedup();
    if let Some(&l) = levels.last() {
        if l > mesh.n_steps {
            return Err(Error::Config(format!("snapshot level {l} beyond n_steps = {}", mesh.n_steps)));
        }
    }
    let (sampler, mass) = match initial {
        InitialLaw::Density(d) => {
            let s = LinearDensitySampler::new(grid, d)?;
            let mass = s.cumulative[grid.n_cells];
            (Some(s), mass)
        }
        InitialLaw::Point(x) => {
            if !(grid.x_lo..=grid.x_hi).contains(x) {
                return Err(Error::OutsideGrid(*x));
            }
            (None, 1.0)
        }
    };
    let dirichlet = grid.boundary == Boundary::Dirichlet;
    let tau = mesh.dt / n_substeps as f64;
    let noise = (2.0 * field.nu * tau).sqrt();
    let (lo, hi) = (grid.x_lo, grid.x_hi);

    let paths: Vec<Vec<Option<f64>>> = (0..n_particles)
        .into_par_iter()
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            let mut x = match (&sampler, initial) {
                (Some(s), _) => Some(s.quantile(rand::Rng::gen::<f64>(&mut rng))),
                (None, InitialLaw::Point(p)) => Some(*p),
                (None, InitialLaw::Density(_)) => unreachable!(),
            };
            if dirichlet && matches!(x, Some(v) if v <= lo || v >= hi) {
                x = None;
            }
            let mut out = Vec::with_capacity(levels.len());
            let mut next = 0;
            for k in 0..=mesh.n_steps {
                if next < levels.len() && levels[next] == k {
                    out.push(x);
                    next += 1;
                }
                if k == mesh.n_steps || next == levels.len() {
                    if next == levels.len() {
                        break;
                    }
                    continue;
                }
                let alpha = &field.alpha.values[k];
                for _ in 0..n_substeps {
                    let Some(pos) = x else { break };
                    let b = grid.interpolate_clamped(alpha, pos);
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    let moved = pos + b * tau + noise * xi;
                    x = if dirichlet {
                        (moved > lo && moved < hi).then_some(moved)
                    } else {
                        Some(reflect(moved, lo, hi))
                    };
                }
            }
            out
        })
        .collect();

    Ok(levels
        .iter()
        .enumerate()
        .map(|(j, &level)| ParticleEnsemble {
            level,
            t: mesh.time(level),
            positions: paths.iter().map(|p| p[j]).collect(),
            n_total: n_particles,
            rng_seed: seed,
            particle_mass: mass / n_particles as f64,
        })
        .collect())
}

/// Particles started from the solution's initial density and driven by its
/// controls.
pub fn simulate(
    spec: &ModelSpec,
    solution: &Solution,
    n_particles: usize,
    n_substeps: usize,
    seed: u64,
    levels: &[usize],
) -> Result<Vec<ParticleEnsemble>> {
    let alpha = solution.alpha();
    let field = DriftField {
        grid: &spec.grid,
        mesh: &spec.mesh,
        nu: spec.nu,
        alpha: &alpha,
    };
    simulate_field(
        &field,
        &InitialLaw::Density(solution.m.values[0].clone()),
        n_particles,
        n_substeps,
        seed,
        levels,
    )
}

/// Nearest-node histogram of the live particles and the matching control
/// measure, whose atom at each node carries the mass-weighted mean of the
/// controls `alpha(t_k, X)` the dynamics would apply to the particles there.
pub fn empirical_measures(
    ensemble: &ParticleEnsemble,
    alpha: &FieldPath,
    grid: &Grid1D,
) -> Result<(DiscreteMeasure, ControlMeasure)> {
    let level = alpha
        .values
        .get(ensemble.level)
        .ok_or_else(|| Error::Config(format!("no control field at level {}", ensemble.level)))?;
    check_len(level.len(), grid.n_nodes())?;
    let mut w = vec![0.0; grid.n_nodes()];
    let mut a = vec![0.0; grid.n_nodes()];
    for x in ensemble.live() {
        let i = grid.nearest_node(x);
        w[i] += ensemble.particle_mass;
        a[i] += ensemble.particle_mass * grid.interpolate_clamped(level, x);
    }
    for (ai, wi) in a.iter_mut().zip(&w) {
        if *wi > 0.0 {
            *ai /= wi;
        }
    }
    let x = grid.nodes();
    Ok((
        DiscreteMeasure { x: x.clone(), w: w.clone() },
        ControlMeasure { x, alpha: a, w },
    ))
}

/// Kolmogorov-Smirnov distance between the live positions and a continuous
/// distribution function.
pub fn ks_distance(positions: impl Iterator<Item = f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs: Vec<f64> = positions.collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    })
}

/// Comparison of the particle oracle with the solution at the final level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub n_particles: usize,
    pub n_substeps: usize,
    pub seed: u64,
    pub absorbed_fraction: f64,
    /// `1 - int m(T)` relative to the initial mass.
    pub pde_absorbed_fraction: f64,
    /// Allowed gap between the two absorbed fractions.
    pub absorbed_slack: f64,
    pub dstar_final: f64,
    pub epsilon: f64,
    pub lambda_inf_empirical: f64,
    pub lambda_inf_solution: f64,
    pub within_tolerance: bool,
}

/// Run the oracle and compare final-time laws: the absorbed fraction within
/// three binomial standard errors plus `C (h^2 + dt + sqrt(dt_sub))`, and
/// `dstar` within the tolerance curve.
pub fn oracle_report(
    spec: &ModelSpec,
    solution: &Solution,
    n_particles: usize,
    n_substeps: usize,
    seed: u64,
) -> Result<OracleReport> {
    let (grid, mesh) = (&spec.grid, &spec.mesh);
    let n = mesh.n_steps;
    let snaps = simulate(spec, solution, n_particles, n_substeps, seed, &[n])?;
    let last = &snaps[0];
    let alpha = solution.alpha();
    let (emp_m, emp_mu) = empirical_measures(last, &alpha, grid)?;
    let pde_m = DiscreteMeasure::from_density(grid, &solution.m.values[n])?;
    let mass0 = integrate(&solution.m.values[0], grid)?;
    let pde_absorbed = 1.0 - integrate(&solution.m.values[n], grid)? / mass0;
    let absorbed = last.absorbed_fraction();
    let p = pde_absorbed.clamp(0.0, 1.0);
    let se = (p * (1.0 - p) / n_particles as f64).sqrt();
    let tau = mesh.dt / n_substeps as f64;
    let absorbed_slack = 3.0 * se + C_ABSORBED * (grid.h * grid.h + mesh.dt + tau.sqrt());
    let d = dstar(&emp_m, &pde_m);
    let epsilon = tolerance_curve(n_particles, grid.h, mesh.dt, tau, grid.boundary);
    let lambda_inf_solution = solution.mu[n].lambda_q(f64::INFINITY);
    let lambda_inf_empirical = emp_mu.lambda_q(f64::INFINITY);
    let absorbed_ok = grid.boundary == Boundary::Neumann || (absorbed - pde_absorbed).abs() <= absorbed_slack;
    Ok(OracleReport {
        n_particles,
        n_substeps,
        seed,
        absorbed_fraction: absorbed,
        pde_absorbed_fraction: pde_absorbed,
        absorbed_slack,
        dstar_final: d,
        epsilon,
        lambda_inf_empirical,
        lambda_inf_solution,
        within_tolerance: absorbed_ok && d <= epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(boundary: Boundary, n_cells: usize, horizon: f64, n_steps: usize) -> (Grid1D, TimeMesh) {
        (
            Grid1D::new(0.0, 1.0, n_cells, boundary).unwrap(),
            TimeMesh::new(horizon, n_steps).unwrap(),
        )
    }

    #[test]
    fn vanishing_noise_is_deterministic_transport() {
        let (grid, mesh) = setup(Boundary::Neumann, 64, 0.5, 50);
        let alpha = FieldPath::constant(&mesh, &grid, -1.0);
        let field = DriftField {
            grid: &grid,
            mesh: &mesh,
            nu: 1e-14,
            alpha: &alpha,
        };
        let snaps = simulate_field(&field, &InitialLaw::Point(0.9), 8, 1, 3, &[50]).unwrap();
        for x in snaps[0].live() {
            assert!((x - 0.4).abs() < 1e-5, "{x}");
        }
    }

    #[test]
    fn reflected_brownian_motion_keeps_the_uniform_law() {
        let (grid, mesh) = setup(Boundary::Neumann, 64, 1.0, 64);
        let alpha = FieldPath::constant(&mesh, &grid, 0.0);
        let field = DriftField {
            grid: &grid,
            mesh: &mesh,
            nu: 0.2,
            alpha: &alpha,
        };
        let n = 20_000;
        let snaps = simulate_field(&field, &InitialLaw::Density(vec![1.0; 65]), n, 4, 11, &[0, 64]).unwrap();
        for s in &snaps {
            assert!(s.live().all(|x| (0.0..=1.0).contains(&x)));
            assert_eq!(s.live_fraction(), 1.0);
            let d = ks_distance(s.live(), |x| x);
            assert!(d <= KS_CRITICAL_001 / (n as f64).sqrt(), "level {}: {d}", s.level);
        }
    }

    #[test]
    fn inverse_cdf_sampler_is_exact_for_linear_densities() {
        let grid = Grid1D::new(0.0, 1.0, 4, Boundary::Neumann).unwrap();
        let dens: Vec<f64> = grid.nodes().iter().map(|x| 2.0 * x).collect();
        let s = LinearDensitySampler::new(&grid, &dens).unwrap();
        for u in [0.0, 0.1, 0.25, 0.5, 0.9, 0.999] {
            // F(x) = x^2
            assert!((s.quantile(u) - u.sqrt()).abs() < 1e-12, "{u}");
        }
    }

    #[test]
    fn absorption_is_permanent_and_seeds_are_reproducible() {
        let (grid, mesh) = setup(Boundary::Dirichlet, 32, 1.0, 32);
        let alpha = FieldPath::constant(&mesh, &grid, 0.3);
        let field = DriftField {
            grid: &grid,
            mesh: &mesh,
            nu: 0.2,
            alpha: &alpha,
        };
        let levels: Vec<usize> = (0..=32).collect();
        let a = simulate_field(&field, &InitialLaw::Point(0.5), 500, 2, 5, &levels).unwrap();
        let b = simulate_field(&field, &InitialLaw::Point(0.5), 500, 2, 5, &levels).unwrap();
        assert_eq!(a, b);
        for j in 0..500 {
            let mut dead = false;
            for s in &a {
                if dead {
                    assert!(s.positions[j].is_none());
                }
                dead |= s.positions[j].is_none();
            }
        }
        assert!(a.windows(2).all(|w| w[1].live_fraction() <= w[0].live_fraction()));
        let c = simulate_field(&field, &InitialLaw::Point(0.5), 500, 2, 6, &levels).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn thread_count_does_not_change_trajectories() {
        let (grid, mesh) = setup(Boundary::Neumann, 32, 1.0, 32);
        let alpha = FieldPath {
            values: (0..=32).map(|k| grid.sample(|x| 0.3 * (x * 3.0 + k as f64 * 0.1).sin())).collect(),
        };
        let field = DriftField {
            grid: &grid,
            mesh: &mesh,
            nu: 0.2,
            alpha: &alpha,
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_field(&field, &InitialLaw::Point(0.2), 300, 2, 9, &[32]).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn single_node_cloud_is_a_single_atom() {
        let grid = Grid1D::new(0.0, 1.0, 8, Boundary::Neumann).unwrap();
        let mesh = TimeMesh::new(1.0, 1).unwrap();
        let alpha = FieldPath {
            values: vec![grid.sample(|x| x); 2],
        };
        let ens = ParticleEnsemble {
            level: 0,
            t: 0.0,
            positions: vec![Some(0.5), Some(0.51), None, Some(0.49)],
            n_total: 4,
            rng_seed: 0,
            particle_mass: 0.25,
        };
        let (m, mu) = empirical_measures(&ens, &alpha, &grid).unwrap();
        assert_eq!(m.w.iter().filter(|&&w| w > 0.0).count(), 1);
        assert!((m.total_mass() - ens.live_fraction()).abs() < 1e-15);
        assert!((mu.alpha[4] - 0.5).abs() < 1e-12);
        let _ = mesh;
    }

    #[test]
    fn too_few_substeps_are_rejected() {
        let (grid, mesh) = setup(Boundary::Neumann, 16, 10.0, 1);
        let alpha = FieldPath::constant(&mesh, &grid, 0.0);
        let field = DriftField {
            grid: &grid,
            mesh: &mesh,
            nu: 0.2,
            alpha: &alpha,
        };
        assert!(simulate_field(&field, &InitialLaw::Point(0.5), 4, 1, 0, &[1]).is_err());
    }
}
