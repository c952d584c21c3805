//! Two-start uniqueness probe for the quadratic model over a range of horizons
//! and the bisection for the largest certified horizon.

use mfgc_lab::config::standard_model;
use mfgc_lab::coupler::{short_horizon_probe, short_horizon_threshold, SolverConfig};
use mfgc_lab::grid::Boundary;
use mfgc_lab::model::{ModelSpec, Variant};

fn main() -> mfgc_lab::Result<()> {
    let mut model = standard_model(Variant::P1Quadratic, Boundary::Neumann);
    model.grid.n_cells = 64;
    model.time.n_steps = 128;
    let config = SolverConfig::for_spec(&ModelSpec::new(&model)?);
    for t in [0.1, 0.5, 1.0, 2.0] {
        match short_horizon_probe(&model, &config, t) {
            Ok(d) => println!("T = {t}: distance {d:.3e}"),
            Err(e) => println!("T = {t}: {e}"),
        }
    }
    let th = short_horizon_threshold(&model, &config, 0.1, 4.0, 5)?;
    println!("certified up to T0 = {} ({} probes)", th.t0, th.probes.len());
    Ok(())
}
