//! Monte-Carlo check of a PDE solution: simulate the controlled diffusion with
//! the solved controls and compare the final-time law with m(T).

use mfgc_lab::config::standard_model;
use mfgc_lab::coupler::{solve, SolverConfig};
use mfgc_lab::grid::Boundary;
use mfgc_lab::model::{FieldProfile, ModelSpec, Variant};
use mfgc_lab::particles::oracle_report;

fn main() -> mfgc_lab::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100_000);
    let mut zero_drift = standard_model(Variant::P1Quadratic, Boundary::Dirichlet);
    zero_drift.c_g = 0.0;
    zero_drift.potential = FieldProfile::Zero;
    zero_drift.terminal_base = FieldProfile::Zero;
    let cases = [
        ("zero drift, absorbing", zero_drift),
        ("standard, reflecting", standard_model(Variant::P1Quadratic, Boundary::Neumann)),
        ("standard, absorbing", standard_model(Variant::P1Quadratic, Boundary::Dirichlet)),
    ];
    for (name, model) in cases {
        let spec = ModelSpec::new(&model)?;
        let sol = solve(&spec, &SolverConfig::for_spec(&spec))?;
        let r = oracle_report(&spec, &sol, n, 4, 7)?;
        println!("{name}:");
        println!("  absorbed {:.4} vs pde {:.4} (slack {:.4})", r.absorbed_fraction, r.pde_absorbed_fraction, r.absorbed_slack);
        println!("  dstar {:.3e} vs eps {:.3e}", r.dstar_final, r.epsilon);
        println!("  Lambda_inf {:.4} vs {:.4}; within tolerance: {}", r.lambda_inf_empirical, r.lambda_inf_solution, r.within_tolerance);
    }
    Ok(())
}
