//! With the Hamiltonian switched off the HJB and FP solvers reduce to the heat
//! equation; compare them with single-mode separation-of-variables solutions.

use std::f64::consts::PI;

use mfgc_lab::fp::fp_solve;
use mfgc_lab::grid::Boundary;
use mfgc_lab::hjb::{hjb_solve, FieldPath};
use mfgc_lab::measures::{ControlMeasure, DiscreteMeasure};
use mfgc_lab::model::{FieldProfile, GridConfig, ModelConfig, ModelSpec, Stage, TimeConfig, Variant};

fn main() -> mfgc_lab::Result<()> {
    println!("boundary   n   hjb error   fp error   5(h^2+dt)");
    for boundary in [Boundary::Dirichlet, Boundary::Neumann] {
        for n in [32, 64, 128, 256] {
            let spec = ModelSpec::new(&ModelConfig {
                variant: Variant::P2Monotone,
                kappa: 0.0,
                nu: 0.2,
                c_f: 0.0,
                c_g: 0.0,
                kernel_width: 0.1,
                q0: 2.0,
                grid: GridConfig { x_lo: 0.0, x_hi: 1.0, n_cells: n, boundary },
                time: TimeConfig { horizon: 1.0, n_steps: 2 * n },
                potential: FieldProfile::Zero,
                terminal_base: FieldProfile::Zero,
                initial_density: FieldProfile::Constant { value: 1.0 },
            })?;
            let (grid, mesh) = (&spec.grid, &spec.mesh);
            let (mode, background): (fn(f64) -> f64, f64) = match boundary {
                Boundary::Dirichlet => (|x| (PI * x).sin(), 0.0),
                Boundary::Neumann => (|x| (PI * x).cos(), 1.0),
            };
            let rate = spec.nu * PI * PI;
            let zero = FieldPath::constant(mesh, grid, 0.0);
            let mus = vec![ControlMeasure::uncontrolled(&DiscreteMeasure::zero(grid)); mesh.n_levels()];
            // scale 0 turns H off
            let u = hjb_solve(&Stage::new(&spec, 0.0)?, &grid.sample(mode), &mus, &zero)?;
            let m = fp_solve(&spec, &grid.sample(|x| background + 0.5 * mode(x)), &zero)?;
            let (mut eu, mut em) = (0.0f64, 0.0f64);
            for k in 0..mesh.n_levels() {
                let t = mesh.time(k);
                for (i, &x) in grid.nodes().iter().enumerate() {
                    eu = eu.max((u.values[k][i] - (-rate * (1.0 - t)).exp() * mode(x)).abs());
                    em = em.max((m.values[k][i] - background - 0.5 * (-rate * t).exp() * mode(x)).abs());
                }
            }
            let tol = 5.0 * (grid.h * grid.h + mesh.dt);
            println!("{:9} {n:4}  {eu:.3e}   {em:.3e}  {tol:.3e}", boundary.name());
        }
    }
    Ok(())
}
