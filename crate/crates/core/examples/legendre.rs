//! Brute-force Legendre transform of the monotone family's Lagrangian against
//! the closed-form Hamiltonian, as the control grid is refined.

use mfgc_lab::config::standard_model;
use mfgc_lab::grid::Boundary;
use mfgc_lab::measures::ControlMeasure;
use mfgc_lab::model::{ModelSpec, Variant};

fn main() -> mfgc_lab::Result<()> {
    let spec = ModelSpec::new(&standard_model(Variant::P2Monotone, Boundary::Neumann))?;
    let mu = ControlMeasure { x: vec![0.2, 0.7], alpha: vec![-0.5, 0.8], w: vec![0.4, 0.5] };
    println!("n_alpha   step      max discrepancy   2 step^2");
    for n_alpha in [101, 401, 1601, 6401] {
        let mut worst = 0.0f64;
        let mut step = 0.0;
        for j in 0..41 {
            let p = -2.0 + 0.1 * j as f64;
            let c = spec.legendre_check(0.3, p, &mu, 5.0, n_alpha)?;
            worst = worst.max(c.discrepancy);
            step = c.alpha_step;
        }
        println!("{n_alpha:7}  {step:.5}  {worst:.3e}         {:.3e}", 2.0 * step * step);
    }
    Ok(())
}
