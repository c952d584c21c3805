//! Per-slice control fixed point: the closed-form linear case and the
//! observed contraction factor as kappa grows.

use mfgc_lab::grid::Boundary;
use mfgc_lab::measures::DiscreteMeasure;
use mfgc_lab::model::{FieldProfile, GridConfig, ModelConfig, ModelSpec, TimeConfig, Variant};
use mfgc_lab::mu_fixed_point::solve_mu;

fn spec(kappa: f64) -> ModelSpec {
    ModelSpec::new(&ModelConfig {
        variant: Variant::P1Quadratic,
        kappa,
        nu: 0.2,
        c_f: 0.0,
        c_g: 0.0,
        kernel_width: 0.1,
        q0: 2.0,
        grid: GridConfig { x_lo: 0.0, x_hi: 1.0, n_cells: 64, boundary: Boundary::Neumann },
        time: TimeConfig { horizon: 1.0, n_steps: 8 },
        potential: FieldProfile::Zero,
        terminal_base: FieldProfile::Zero,
        initial_density: FieldProfile::Constant { value: 1.0 },
    })
    .expect("valid model")
}

fn main() -> mfgc_lab::Result<()> {
    // D_xu = 1 and kappa = 1/2: alpha = -(1 + alpha / 2), so alpha = -2/3
    let s = spec(0.5);
    let m = DiscreteMeasure::from_density(&s.grid, &vec![1.0; s.grid.n_nodes()])?;
    let (mu, rep) = solve_mu(&s, 1.0, &vec![1.0; s.grid.n_nodes()], &m, 1e-12, 200)?;
    println!("closed form: alpha = {:.12} after {} iterations", mu.alpha[0], rep.iterations);

    println!("kappa  ratio  iterations  Lambda_inf");
    for kappa in [0.1, 0.2, 0.4, 0.8] {
        let s = spec(kappa);
        let p = s.grid.sample(|x| (2.0 * x).sin() + 0.3);
        let m = DiscreteMeasure::from_density(&s.grid, &s.initial_density)?;
        let (_, rep) = solve_mu(&s, 1.0, &p, &m, 1e-12, 200)?;
        println!("{kappa:5.2}  {:.3}  {:10}  {:.4}", rep.observed_ratio, rep.iterations, rep.lambda_inf);
    }
    Ok(())
}
