//! Run the default estimate checks on both standard models and print the check
//! table as CSV.

use mfgc_lab::config::standard_model;
use mfgc_lab::coupler::{solve, SolverConfig};
use mfgc_lab::estimates::default_suite;
use mfgc_lab::grid::Boundary;
use mfgc_lab::io::checks_csv;
use mfgc_lab::model::{ModelSpec, Variant};

fn main() -> mfgc_lab::Result<()> {
    for variant in [Variant::P1Quadratic, Variant::P2Monotone] {
        let spec = ModelSpec::new(&standard_model(variant, Boundary::Neumann))?;
        let config = SolverConfig::for_spec(&spec);
        let sol = solve(&spec, &config)?;
        let scales = [0.25, 0.5, 1.0];
        let gradient = (variant == Variant::P1Quadratic).then_some(&scales[..]);
        let checks = default_suite(&sol, &spec, &config, gradient)?;
        println!("# {}", variant.name());
        print!("{}", checks_csv(&checks));
    }
    Ok(())
}
