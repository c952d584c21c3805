//! Load a shipped config, solve, write the solution directory, read it back
//! and confirm the round trip is exact.

use std::path::Path;

use mfgc_lab::config::ExperimentConfig;
use mfgc_lab::coupler::solve;
use mfgc_lab::io::{read_solution, write_solution};
use mfgc_lab::model::ModelSpec;

fn main() -> mfgc_lab::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/decoupled.toml");
    let config = ExperimentConfig::load(&path)?;
    let spec = ModelSpec::new(&config.model)?;
    let sol = solve(&spec, &config.solver.resolve(&spec))?;
    let dir = std::env::temp_dir().join(format!("mfgc-lab-roundtrip-{}", std::process::id()));
    write_solution(&dir, &config, &spec, &sol)?;
    let back = read_solution(&dir)?;
    println!("wrote {}", dir.display());
    println!("u identical: {}", back.solution.u == sol.u);
    println!("m identical: {}", back.solution.m == sol.m);
    println!("mu identical: {}", back.solution.mu == sol.mu);
    println!("config identical: {}", back.config == config);
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
