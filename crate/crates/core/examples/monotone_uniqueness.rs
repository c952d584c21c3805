//! Solve the monotone model from several random starting guesses and report
//! how far apart the solutions end up.

use mfgc_lab::config::standard_model;
use mfgc_lab::coupler::{uniqueness_probe, SolverConfig};
use mfgc_lab::grid::Boundary;
use mfgc_lab::model::{ModelSpec, Variant};

fn main() -> mfgc_lab::Result<()> {
    for boundary in [Boundary::Neumann, Boundary::Dirichlet] {
        let spec = ModelSpec::new(&standard_model(Variant::P2Monotone, boundary))?;
        let config = SolverConfig::for_spec(&spec);
        let d = uniqueness_probe(&spec, &config, 3, 11)?;
        println!("{}: max pairwise distance {d:.3e} (10 tol_outer = {:.1e})", boundary.name(), 10.0 * config.tol_outer);
    }
    Ok(())
}
