//! Forward conservative finite-volume solver for `m_t - nu m_xx + (alpha m)_x = 0`.
//!
//! Each node owns a control volume (`h`, or `h/2` at the ends). Advection is
//! explicit first-order upwind with face velocities averaged from the nodes;
//! diffusion is implicit with the same tridiagonal operator as the backward
//! solver. Neumann boundary faces carry no flux, so `sum V_i m_i` is conserved
//! exactly. Dirichlet boundary nodes hold `m = 0` and mass leaves through the
//! first interior faces.

use crate::error::{check_len, Error, Result};
use crate::grid::{implicit_diffusion_bands, solve_tridiagonal, Boundary, Grid1D, ScalarField};
use crate::hjb::FieldPath;
use crate::model::ModelSpec;

/// Explicit upwind transport over `dt` split into substeps so that each
/// substep has Courant number at most `1/2`, which keeps it positive.
fn advect(grid: &Grid1D, m: &mut [f64], alpha: &[f64], dt: f64) -> Result<()> {
    let n = grid.n_cells;
    let h = grid.h;
    let b: Vec<f64> = (0..n).map(|i| 0.5 * (alpha[i] + alpha[i + 1])).collect();
    let b_max = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let courant = dt * b_max / h;
    if courant > 1.0 {
        return Err(Error::Stability(format!(
            "transport needs dt max|b|/h <= 1, got {courant:.4}"
        )));
    }
    let n_sub = ((2.0 * courant).ceil() as usize).max(1);
    let tau = dt / n_sub as f64;
    let volumes = grid.control_volumes();
    let mut flux = vec![0.0; n];
    for _ in 0..n_sub {
        for (j, f) in flux.iter_mut().enumerate() {
            *f = b[j].max(0.0) * m[j] + b[j].min(0.0) * m[j + 1];
        }
        for i in 0..=n {
            let out = if i < n { flux[i] } else { 0.0 };
            let inflow = if i > 0 { flux[i - 1] } else { 0.0 };
            m[i] -= tau / volumes[i] * (out - inflow);
        }
        if grid.boundary == Boundary::Dirichlet {
            m[0] = 0.0;
            m[n] = 0.0;
        }
    }
    Ok(())
}

/// One forward step of length `dt` with nodal control velocity `alpha`.
pub fn fp_step(spec: &ModelSpec, m_prev: &[f64], alpha: &[f64], dt: f64) -> Result<ScalarField> {
    let [lower, diag, upper] = implicit_diffusion_bands(&spec.grid, spec.nu, dt);
    step_with_bands(&spec.grid, m_prev, alpha, dt, (&lower, &diag, &upper))
}

fn step_with_bands(
    grid: &Grid1D,
    m_prev: &[f64],
    alpha: &[f64],
    dt: f64,
    bands: (&[f64], &[f64], &[f64]),
) -> Result<ScalarField> {
    check_len(m_prev.len(), grid.n_nodes())?;
    check_len(alpha.len(), grid.n_nodes())?;
    if let Some(v) = m_prev.iter().find(|&&v| v < -1e-12) {
        return Err(Error::InvalidMeasure(format!("negative density entry {v}")));
    }
    let mut m = m_prev.to_vec();
    if grid.boundary == Boundary::Dirichlet {
        m[0] = 0.0;
        m[grid.n_cells] = 0.0;
    }
    advect(grid, &mut m, alpha, dt)?;
    solve_tridiagonal(bands.0, bands.1, bands.2, &m)
}

/// Full forward sweep from `m0`; the step from level `k` to `k + 1` uses
/// `alpha_path[k]`.
pub fn fp_solve(spec: &ModelSpec, m0: &[f64], alpha_path: &FieldPath) -> Result<FieldPath> {
    let (grid, mesh) = (&spec.grid, &spec.mesh);
    alpha_path.check_shape(mesh, grid)?;
    check_len(m0.len(), grid.n_nodes())?;
    let [lower, diag, upper] = implicit_diffusion_bands(grid, spec.nu, mesh.dt);
    let mut values = Vec::with_capacity(mesh.n_levels());
    let mut m = m0.to_vec();
    if grid.boundary == Boundary::Dirichlet {
        m[0] = 0.0;
        m[grid.n_cells] = 0.0;
    }
    values.push(m);
    for k in 0..mesh.n_steps {
        let next = step_with_bands(
            grid,
            &values[k],
            &alpha_path.values[k],
            mesh.dt,
            (&lower, &diag, &upper),
        )?;
        values.push(next);
    }
    Ok(FieldPath { values })
}

/// `sum_i V_i m_i` at every level.
pub fn mass_path(grid: &Grid1D, m: &FieldPath) -> Vec<f64> {
    let v = grid.control_volumes();
    m.values
        .iter()
        .map(|level| level.iter().zip(&v).map(|(a, b)| a * b).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeMesh;
    use crate::model::{FieldProfile, GridConfig, ModelConfig, TimeConfig, Variant};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn spec(boundary: Boundary, n_cells: usize, n_steps: usize, horizon: f64) -> ModelSpec {
        ModelSpec::new(&ModelConfig {
            variant: Variant::P2Monotone,
            kappa: 0.0,
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
            time: TimeConfig { horizon, n_steps },
            potential: FieldProfile::Zero,
            terminal_base: FieldProfile::Zero,
            initial_density: FieldProfile::Constant { value: 1.0 },
        })
        .unwrap()
    }

    fn drift(mesh: &TimeMesh, grid: &Grid1D, f: impl Fn(f64, f64) -> f64) -> FieldPath {
        FieldPath {
            values: (0..mesh.n_levels())
                .map(|k| grid.sample(|x| f(mesh.time(k), x)))
                .collect(),
        }
    }

    #[test]
    fn uniform_is_stationary_under_neumann() {
        let s = spec(Boundary::Neumann, 32, 32, 1.0);
        let m = fp_solve(&s, &vec![1.0; 33], &FieldPath::constant(&s.mesh, &s.grid, 0.0)).unwrap();
        assert!(m.values.iter().flatten().all(|v| (v - 1.0).abs() < 1e-13));
    }

    #[test]
    fn neumann_heat_flow_relaxes_at_the_discrete_rate() {
        let s = spec(Boundary::Neumann, 64, 400, 2.0);
        let m0 = s.grid.sample(|x| 1.0 + 0.5 * (PI * x).cos());
        let m = fp_solve(&s, &m0, &FieldPath::constant(&s.mesh, &s.grid, 0.0)).unwrap();
        let h = s.grid.h;
        let rate = 2.0 / (h * h) * (1.0 - (PI * h).cos());
        let last = &m.values[400];
        let dist = last.iter().fold(0.0f64, |a, v| a.max((v - 1.0).abs()));
        assert!(dist <= (-0.2 * rate * 2.0).exp());
        // cos(pi x) is an exact eigenvector: implicit Euler decays it exactly
        let factor = (1.0 + s.mesh.dt * 0.2 * rate).powi(-400);
        assert!((dist - 0.5 * factor).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_sine_mass_decays_at_the_heat_rate() {
        let mut errs = Vec::new();
        for (n, steps) in [(32, 32), (64, 128), (128, 512)] {
            let s = spec(Boundary::Dirichlet, n, steps, 1.0);
            let m0 = s.grid.sample(|x| 0.5 * PI * (PI * x).sin());
            let m = fp_solve(&s, &m0, &FieldPath::constant(&s.mesh, &s.grid, 0.0)).unwrap();
            let mass = mass_path(&s.grid, &m);
            let mut err = 0.0f64;
            for k in 0..=steps {
                let t = s.mesh.time(k);
                err = err.max((mass[k] - (-0.2 * PI * PI * t).exp() * mass[0]).abs());
                for (i, &x) in s.grid.nodes().iter().enumerate() {
                    let exact = (-0.2 * PI * PI * t).exp() * 0.5 * PI * (PI * x).sin();
                    err = err.max((m.values[k][i] - exact).abs());
                }
            }
            assert!(err <= 5.0 * (s.grid.h.powi(2) + s.mesh.dt), "{n}: {err}");
            errs.push(err);
        }
        assert!(errs[2] < errs[1] && errs[1] < errs[0]);
    }

    #[test]
    fn constant_drift_pushes_mass_to_the_wall() {
        let s = spec(Boundary::Neumann, 64, 400, 4.0);
        let m = fp_solve(&s, &vec![1.0; 65], &drift(&s.mesh, &s.grid, |_, _| 0.5)).unwrap();
        let nodes = s.grid.nodes();
        let v = s.grid.control_volumes();
        let mean: Vec<f64> = m
            .values
            .iter()
            .map(|lvl| lvl.iter().zip(&nodes).zip(&v).map(|((a, x), w)| a * x * w).sum())
            .collect();
        assert!(mean.windows(2).all(|w| w[1] >= w[0] - 1e-14));
        assert!(m.values[400][64] > m.values[400][0]);
    }

    #[test]
    fn excessive_courant_number_is_rejected() {
        let s = spec(Boundary::Neumann, 64, 4, 1.0);
        let r = fp_solve(&s, &vec![1.0; 65], &FieldPath::constant(&s.mesh, &s.grid, 0.5));
        assert!(matches!(r, Err(Error::Stability(_))));
    }

    proptest! {
        #[test]
        fn mass_and_positivity(
            a in -0.75f64..0.75,
            b in -0.75f64..0.75,
            freq in 0.5f64..8.0,
            neumann in any::<bool>(),
        ) {
            let boundary = if neumann { Boundary::Neumann } else { Boundary::Dirichlet };
            let s = spec(boundary, 48, 48, 1.0);
            let m0 = s.grid.sample(|x| (-(x - 0.4).powi(2) / 0.01).exp());
            let al = drift(&s.mesh, &s.grid, |t, x| a * (freq * x + t).sin() + b * x * (1.0 - x));
            let m = fp_solve(&s, &m0, &al).unwrap();
            let mass = mass_path(&s.grid, &m);
            prop_assert!(m.values.iter().flatten().all(|&v| v >= -1e-12));
            for w in mass.windows(2) {
                if neumann {
                    prop_assert!((w[1] - w[0]).abs() <= 1e-14 * mass[0].max(1.0));
                } else {
                    prop_assert!(w[1] <= w[0] + 1e-12);
                }
            }
        }
    }
}
