//! Refinement study of the energy identity residual under simultaneous
//! refinement of h and dt, and the ratio residual / (h^2 + dt) that fixes the
//! check constant.

use mfgc_lab::config::{refined, standard_model};
use mfgc_lab::coupler::{solve, SolverConfig};
use mfgc_lab::estimates::{energy_residual, refinement_orders, C_ID};
use mfgc_lab::grid::Boundary;
use mfgc_lab::model::{ModelSpec, Variant};

fn main() -> mfgc_lab::Result<()> {
    for boundary in [Boundary::Neumann, Boundary::Dirichlet] {
        for kappa in [0.0, 0.3] {
            let mut base = standard_model(Variant::P1Quadratic, boundary);
            base.kappa = kappa;
            let mut residuals = Vec::new();
            println!("{} kappa {kappa}", boundary.name());
            for n in [32, 64, 128, 256] {
                let spec = ModelSpec::new(&refined(&base, n))?;
                let sol = solve(&spec, &SolverConfig::for_spec(&spec))?;
                let r = energy_residual(&sol, &spec)?;
                let slack = spec.grid.h.powi(2) + spec.mesh.dt;
                println!("  n {n:4}: residual {r:.4e}, ratio {:.4} (C_id = {C_ID})", r / slack);
                residuals.push(r);
            }
            let orders: Vec<String> = refinement_orders(&residuals).iter().map(|o| format!("{o:.4}")).collect();
            println!("  orders {}", orders.join(" "));
        }
    }
    Ok(())
}
