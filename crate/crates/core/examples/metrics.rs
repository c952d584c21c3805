//! W1 and the bounded-Lipschitz distance on a few measure pairs, including
//! one with lost mass where W1 is undefined.

use mfgc_lab::grid::{Boundary, Grid1D};
use mfgc_lab::measures::{dstar, w1, DiscreteMeasure};

fn gaussian(g: &Grid1D, c: f64, s: f64, mass: f64) -> mfgc_lab::Result<DiscreteMeasure> {
    let d = g.sample(|x| (-(x - c) * (x - c) / (2.0 * s * s)).exp());
    let z: f64 = d.iter().zip(g.control_volumes()).map(|(a, v)| a * v).sum();
    DiscreteMeasure::from_density(g, &d.iter().map(|v| mass * v / z).collect::<Vec<_>>())
}

fn main() -> mfgc_lab::Result<()> {
    let g = Grid1D::unit(200, Boundary::Neumann)?;
    for shift in [0.01, 0.1, 0.3] {
        let a = gaussian(&g, 0.4, 0.05, 1.0)?;
        let b = gaussian(&g, 0.4 + shift, 0.05, 1.0)?;
        println!("shift {shift}: W1 {:.4}, dstar {:.4}", w1(&a, &b)?, dstar(&a, &b));
    }
    let a = gaussian(&g, 0.5, 0.1, 1.0)?;
    let b = gaussian(&g, 0.5, 0.1, 0.7)?;
    println!("30% mass lost: dstar {:.4}, W1 {:?}", dstar(&a, &b), w1(&a, &b).map_err(|e| e.to_string()));
    Ok(())
}
