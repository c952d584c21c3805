//! Solve the standard quadratic model with reflecting walls and summarize the
//! continuation, the control fixed points and the solution.

use mfgc_lab::config::standard_model;
use mfgc_lab::coupler::{solve, SolverConfig};
use mfgc_lab::fp::mass_path;
use mfgc_lab::grid::Boundary;
use mfgc_lab::model::{ModelSpec, Variant};

fn main() -> mfgc_lab::Result<()> {
    let boundary = match std::env::args().nth(1).as_deref() {
        Some("dirichlet") => Boundary::Dirichlet,
        _ => Boundary::Neumann,
    };
    let spec = ModelSpec::new(&standard_model(Variant::P1Quadratic, boundary))?;
    let config = SolverConfig::for_spec(&spec);
    let sol = solve(&spec, &config)?;
    for st in &sol.report.stages {
        let last = st.residuals.last().copied().unwrap_or(0.0);
        println!("scale {:.2}: {:3} sweeps, last change {last:.2e}", st.scale, st.iterations);
    }
    let mu = &sol.report.mu;
    println!(
        "control fixed points: at most {} iterations, ratio {:.3}, residual {:.1e}",
        mu.max_iterations, mu.max_observed_ratio, mu.max_fixed_point_residual
    );
    let mass = mass_path(&spec.grid, &sol.m);
    println!("|u|_inf = {:.4}, mass {:.6} -> {:.6}", sol.u.sup_norm(), mass[0], mass[mass.len() - 1]);
    let n = spec.mesh.n_steps;
    println!("Lambda_inf at t = 0, T: {:.4}, {:.4}", sol.mu[0].lambda_q(f64::INFINITY), sol.mu[n].lambda_q(f64::INFINITY));
    Ok(())
}
