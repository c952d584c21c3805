//! Backward semi-implicit solver for the Hamilton-Jacobi equation
//! `-u_t - nu u_xx + H_stage(x, u_x, mu) = source`.
//!
//! Diffusion is implicit; the Hamiltonian and the source are explicit and
//! use the gradient of the later time level. Dirichlet rows pin `u = 0` on
//! the boundary, Neumann rows use mirrored ghost nodes.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::{implicit_diffusion_bands, solve_tridiagonal, Boundary, Grid1D, ScalarField, TimeMesh};
use crate::measures::ControlMeasure;
use crate::model::Stage;

/// One scalar field per time level `k = 0..=n_steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldPath {
    pub values: Vec<ScalarField>,
}

impl FieldPath {
    pub fn constant(mesh: &TimeMesh, grid: &Grid1D, value: f64) -> Self {
        Self {
            values: vec![vec![value; grid.n_nodes()]; mesh.n_levels()],
        }
    }

    pub fn check_shape(&self, mesh: &TimeMesh, grid: &Grid1D) -> Result<()> {
        check_len(self.values.len(), mesh.n_levels())?;
        for v in &self.values {
            check_len(v.len(), grid.n_nodes())?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn sup_distance(&self, other: &FieldPath) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()))
    }

    /// Solver gradient at every level.
    pub fn gradients(&self, grid: &Grid1D) -> FieldPath {
        FieldPath {
            values: self.values.iter().map(|u| grid.solver_gradient(u)).collect(),
        }
    }
}

/// Check `dt max|D_pH| 2/h <= 1` for the explicit Hamiltonian term.
fn check_stability(stage: &Stage, p: &[f64], z: f64, dt: f64) -> Result<()> {
    let h = stage.spec.grid.h;
    let lip = p.iter().fold(0.0f64, |a, &pi| a.max(stage.dp(pi, z).abs()));
    let number = dt * lip * 2.0 / h;
    if number > 1.0 {
        return Err(Error::Stability(format!(
            "explicit Hamiltonian needs dt max|D_pH| 2/h <= 1, got {number:.4} (max|D_pH| = {lip:.4})"
        )));
    }
    Ok(())
}

/// One backward step from `u_next` (level `k + 1`) to level `k`. `mu` and
/// `source` are the level-`k + 1` control measure and source term.
pub fn hjb_step(
    stage: &Stage,
    u_next: &[f64],
    mu: &ControlMeasure,
    source: &[f64],
    dt: f64,
) -> Result<ScalarField> {
    let grid = &stage.spec.grid;
    let [lower, diag, upper] = implicit_diffusion_bands(grid, stage.spec.nu, dt);
    step_with_bands(stage, u_next, mu, source, dt, (&lower, &diag, &upper))
}

fn step_with_bands(
    stage: &Stage,
    u_next: &[f64],
    mu: &ControlMeasure,
    source: &[f64],
    dt: f64,
    bands: (&[f64], &[f64], &[f64]),
) -> Result<ScalarField> {
    let grid = &stage.spec.grid;
    check_len(u_next.len(), grid.n_nodes())?;
    check_len(source.len(), grid.n_nodes())?;
    let p = grid.solver_gradient(u_next);
    let z = mu.first_moment();
    check_stability(stage, &p, z, dt)?;
    let mut rhs: Vec<f64> = (0..grid.n_nodes())
        .map(|i| u_next[i] - dt * (stage.hamiltonian(i, p[i], z) - source[i]))
        .collect();
    if grid.boundary == Boundary::Dirichlet {
        rhs[0] = 0.0;
        rhs[grid.n_cells] = 0.0;
    }
    solve_tridiagonal(bands.0, bands.1, bands.2, &rhs)
}

/// Full backward sweep from `terminal`. `mu_path[k]` and `m_path[k]` enter
/// the step that produces level `k - 1`.
pub fn hjb_solve(
    stage: &Stage,
    terminal: &[f64],
    mu_path: &[ControlMeasure],
    m_path: &FieldPath,
) -> Result<FieldPath> {
    let spec = stage.spec;
    let (grid, mesh) = (&spec.grid, &spec.mesh);
    check_len(terminal.len(), grid.n_nodes())?;
    check_len(mu_path.len(), mesh.n_levels())?;
    m_path.check_shape(mesh, grid)?;
    let [lower, diag, upper] = implicit_diffusion_bands(grid, spec.nu, mesh.dt);
    let mut values = vec![Vec::new(); mesh.n_levels()];
    let mut u = terminal.to_vec();
    if grid.boundary == Boundary::Dirichlet {
        u[0] = 0.0;
        u[grid.n_cells] = 0.0;
    }
    values[mesh.n_steps] = u;
    for k in (0..mesh.n_steps).rev() {
        let source = stage.source(&m_path.values[k + 1])?;
        values[k] = step_with_bands(
            stage,
            &values[k + 1],
            &mu_path[k + 1],
            &source,
            mesh.dt,
            (&lower, &diag, &upper),
        )?;
    }
    Ok(FieldPath { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::DiscreteMeasure;
    use crate::model::{FieldProfile, GridConfig, ModelConfig, ModelSpec, TimeConfig, Variant};
    use std::f64::consts::PI;

    pub(crate) fn heat_spec(boundary: Boundary, n_cells: usize, n_steps: usize, kappa: f64) -> ModelSpec {
        ModelSpec::new(&ModelConfig {
            variant: Variant::P2Monotone,
            kappa,
            nu: 0.2,
            c_f: 0.0,
            c_g: 0.0,
            kernel_width: 0.1,
            q0: 2.0,
            grid: GridConfig {
                x_lo: 0.0,
                x_hi: 1.0,
                n_cells,
                boundary,
            },
            time: TimeConfig {
                horizon: 1.0,
                n_steps,
            },
            potential: FieldProfile::Zero,
            terminal_base: FieldProfile::Zero,
            initial_density: FieldProfile::Constant { value: 1.0 },
        })
        .unwrap()
    }

    fn uncontrolled_path(spec: &ModelSpec) -> (Vec<ControlMeasure>, FieldPath) {
        let m = FieldPath::constant(&spec.mesh, &spec.grid, 0.0);
        let mu = ControlMeasure::uncontrolled(&DiscreteMeasure::zero(&spec.grid));
        (vec![mu; spec.mesh.n_levels()], m)
    }

    /// Heat equation: `theta = 0` switches the Hamiltonian off.
    fn heat(spec: &ModelSpec, terminal: &[f64]) -> FieldPath {
        let (mu, m) = uncontrolled_path(spec);
        hjb_solve(&Stage::new(spec, 0.0).unwrap(), terminal, &mu, &m).unwrap()
    }

    #[test]
    fn constants_are_preserved_under_neumann() {
        let s = heat_spec(Boundary::Neumann, 32, 16, 0.0);
        let u = heat(&s, &vec![2.5; 33]);
        assert!(u.values.iter().flatten().all(|&v| (v - 2.5).abs() < 1e-13));
    }

    #[test]
    fn dirichlet_sine_decays_at_the_heat_rate() {
        let mut errs = Vec::new();
        for (n, steps) in [(32, 32), (64, 128), (128, 512)] {
            let s = heat_spec(Boundary::Dirichlet, n, steps, 0.0);
            let g = s.grid.sample(|x| (PI * x).sin());
            let u = heat(&s, &g);
            let mut err = 0.0f64;
            for k in 0..=steps {
                let decay = (-0.2 * PI * PI * (1.0 - s.mesh.time(k))).exp();
                for (i, x) in s.grid.nodes().iter().enumerate() {
                    err = err.max((u.values[k][i] - decay * (PI * x).sin()).abs());
                }
                assert_eq!(u.values[k][0], 0.0);
                assert_eq!(u.values[k][n], 0.0);
            }
            assert!(err <= 5.0 * (s.grid.h.powi(2) + s.mesh.dt), "{n}: {err}");
            errs.push(err);
        }
        assert!(errs[2] < errs[1] && errs[1] < errs[0]);
    }

    #[test]
    fn zero_terminal_without_hamiltonian_gives_zero() {
        let s = heat_spec(Boundary::Neumann, 16, 8, 0.3);
        let u = heat(&s, &vec![0.0; 17]);
        assert_eq!(u.sup_norm(), 0.0);
    }

    #[test]
    fn comparison_principle() {
        let s = heat_spec(Boundary::Neumann, 64, 256, 0.0);
        let st = Stage::new(&s, 1.0).unwrap();
        let (mu, m) = uncontrolled_path(&s);
        let g1 = s.grid.sample(|x| 0.3 * (PI * x).cos() + 0.05);
        let g2 = s.grid.sample(|x| 0.3 * (PI * x).cos() - 0.02 * (3.0 * PI * x).cos().powi(2));
        let u1 = hjb_solve(&st, &g1, &mu, &m).unwrap();
        let u2 = hjb_solve(&st, &g2, &mu, &m).unwrap();
        for (a, b) in u1.values.iter().flatten().zip(u2.values.iter().flatten()) {
            assert!(*a >= b - 1e-8);
        }
    }

    #[test]
    fn neumann_normal_derivative_vanishes() {
        let s = heat_spec(Boundary::Neumann, 32, 64, 0.0);
        let st = Stage::new(&s, 1.0).unwrap();
        let (mu, m) = uncontrolled_path(&s);
        let u = hjb_solve(&st, &s.grid.sample(|x| 0.2 * (PI * x).cos()), &mu, &m).unwrap();
        for level in &u.gradients(&s.grid).values {
            assert_eq!(level[0], 0.0);
            assert_eq!(level[32], 0.0);
        }
    }

    #[test]
    fn manufactured_solution_converges() {
        // u(t,x) = e^t cos(pi x) with H = p^2/2 needs source
        // -u_t + nu pi^2 u + u_x^2/2
        let mut errs = Vec::new();
        for (n, steps) in [(16, 64), (32, 256), (64, 1024)] {
            let s = heat_spec(Boundary::Neumann, n, steps, 0.0);
            let st = Stage::new(&s, 1.0).unwrap();
            let exact = |t: f64, x: f64| 0.2 * t.exp() * (PI * x).cos();
            let (mu, _) = uncontrolled_path(&s);
            let mut u = s.grid.sample(|x| exact(1.0, x));
            let [lo, di, up] = implicit_diffusion_bands(&s.grid, s.nu, s.mesh.dt);
            let mut err = 0.0f64;
            for k in (0..steps).rev() {
                let t = s.mesh.time(k + 1);
                let src: Vec<f64> = s
                    .grid
                    .nodes()
                    .iter()
                    .map(|&x| {
                        let ux = -0.2 * PI * t.exp() * (PI * x).sin();
                        -exact(t, x) + s.nu * PI * PI * exact(t, x) + 0.5 * ux * ux
                    })
                    .collect();
                u = step_with_bands(&st, &u, &mu[0], &src, s.mesh.dt, (&lo, &di, &up)).unwrap();
                let tk = s.mesh.time(k);
                for (i, &x) in s.grid.nodes().iter().enumerate() {
                    err = err.max((u[i] - exact(tk, x)).abs());
                }
            }
            errs.push(err);
        }
        assert!(errs[0] / errs[1] > 2.5 && errs[1] / errs[2] > 2.5, "{errs:?}");
    }

    #[test]
    fn large_steps_are_rejected() {
        let s = heat_spec(Boundary::Neumann, 64, 4, 0.0);
        let st = Stage::new(&s, 1.0).unwrap();
        let (mu, m) = uncontrolled_path(&s);
        let g = s.grid.sample(|x| 2.0 * (PI * x).cos());
        assert!(matches!(hjb_solve(&st, &g, &mu, &m), Err(Error::Stability(_))));
    }
}
