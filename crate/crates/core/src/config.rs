//! Experiment files: one TOML document with a `[model]` table and optional
//! `[solver]`, `[verify]`, `[particles]` and `[sweep]` tables. Unknown keys
//! are errors. The schema is documented in `configs/SCHEMA.md`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coupler::SolverConfig;
use crate::error::{Error, Result};
use crate::grid::Boundary;
use crate::model::{FieldProfile, GridConfig, ModelConfig, ModelSpec, TimeConfig, Variant};

/// Version of the JSON reports and of the CSV column layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Solver settings; every key is optional and the problem is taken from the
/// model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub tol_outer: Option<f64>,
    pub max_outer: Option<usize>,
    pub damping: Option<f64>,
    pub continuation_steps: Option<Vec<f64>>,
    pub tol_mu: Option<f64>,
    pub max_iter_mu: Option<usize>,
}

impl SolverSection {
    pub fn resolve(&self, spec: &ModelSpec) -> SolverConfig {
        let mut c = SolverConfig::for_spec(spec);
        if let Some(v) = self.tol_outer {
            c.tol_outer = v;
        }
        if let Some(v) = self.max_outer {
            c.max_outer = v;
        }
        if let Some(v) = self.damping {
            c.damping = v;
        }
        if let Some(v) = &self.continuation_steps {
            c.continuation_steps = v.clone();
        }
        if let Some(v) = self.tol_mu {
            c.tol_mu = v;
        }
        if let Some(v) = self.max_iter_mu {
            c.max_iter_mu = v;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Continuation values for the gradient scaling check of the quadratic
    /// family; empty skips it.
    #[serde(default = "default_gradient_scales")]
    pub gradient_scales: Vec<f64>,
}

fn default_gradient_scales() -> Vec<f64> {
    vec![0.25, 0.5, 1.0]
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            gradient_scales: default_gradient_scales(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticlesSection {
    #[serde(default = "default_n_particles")]
    pub n_particles: usize,
    #[serde(default = "default_n_substeps")]
    pub n_substeps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_n_particles() -> usize {
    100_000
}
fn default_n_substeps() -> usize {
    4
}
fn default_seed() -> u64 {
    7
}

impl Default for ParticlesSection {
    fn default() -> Self {
        Self {
            n_particles: default_n_particles(),
            n_substeps: default_n_substeps(),
            seed: default_seed(),
        }
    }
}

/// Bisection settings for the short-horizon uniqueness threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSearch {
    pub t_lo: f64,
    pub t_hi: f64,
    #[serde(default = "default_bisections")]
    pub bisections: usize,
}

fn default_bisections() -> usize {
    6
}

/// Parameter grid. Each list replaces the model value; missing lists keep
/// it. Points are the Cartesian product with `kappa` varying slowest, then
/// `horizon`, then `boundary`. Horizons keep the model's time step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub kappa: Option<Vec<f64>>,
    pub horizon: Option<Vec<f64>>,
    pub boundary: Option<Vec<Boundary>>,
    pub short_horizon: Option<HorizonSearch>,
}

/// One sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    pub kappa: f64,
    pub horizon: f64,
    pub boundary: Boundary,
    pub model: ModelConfig,
}

impl SweepSection {
    pub fn points(&self, base: &ModelConfig) -> Vec<SweepPoint> {
        let kappas = self.kappa.clone().unwrap_or_else(|| vec![base.kappa]);
        let horizons = self.horizon.clone().unwrap_or_else(|| vec![base.time.horizon]);
        let boundaries = self.boundary.clone().unwrap_or_else(|| vec![base.grid.boundary]);
        let dt = base.time.horizon / base.time.n_steps as f64;
        let mut out = Vec::new();
        for &kappa in &kappas {
            for &horizon in &horizons {
                for &boundary in &boundaries {
                    let mut model = base.clone();
                    model.kappa = kappa;
                    model.time.horizon = horizon;
                    model.time.n_steps = ((horizon / dt).round() as usize).max(1);
                    model.grid.boundary = boundary;
                    out.push(SweepPoint {
                        index: out.len(),
                        kappa,
                        horizon,
                        boundary,
                        model,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub particles: ParticlesSection,
    pub sweep: Option<SweepSection>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn standard(variant: Variant, boundary: Boundary) -> Self {
        Self {
            model: standard_model(variant, boundary),
            solver: SolverSection::default(),
            verify: VerifySection::default(),
            particles: ParticlesSection::default(),
            sweep: None,
        }
    }
}

/// The reference setup used throughout the tests: `[0, 1]`, `nu = 0.2`,
/// `T = 1`, 128 cells, 256 steps, `kappa = 0.3`, a Gaussian initial density,
/// `G0 = 0.2 cos(pi x)` and `phi = 0.05 cos(2 pi x)`. The quadratic family
/// has `c_g = 0.1`; the monotone family has `c_f = 0.5`.
pub fn standard_model(variant: Variant, boundary: Boundary) -> ModelConfig {
    let (c_f, c_g) = match variant {
        Variant::P1Quadratic => (0.0, 0.1),
        Variant::P2Monotone => (0.5, 0.0),
    };
    ModelConfig {
        variant,
        kappa: 0.3,
        nu: 0.2,
        c_f,
        c_g,
        kernel_width: 0.1,
        q0: 2.0,
        grid: GridConfig {
            x_lo: 0.0,
            x_hi: 1.0,
            n_cells: 128,
            boundary,
        },
        time: TimeConfig {
            horizon: 1.0,
            n_steps: 256,
        },
        potential: FieldProfile::Cosine {
            amplitude: 0.05,
            modes: 2,
        },
        terminal_base: FieldProfile::Cosine {
            amplitude: 0.2,
            modes: 1,
        },
        initial_density: FieldProfile::Gaussian {
            amplitude: 1.0,
            center: 0.5,
            width: 0.15,
        },
    }
}

/// Same model at `n_cells` cells and `2 n_cells` steps.
pub fn refined(model: &ModelConfig, n_cells: usize) -> ModelConfig {
    let mut m = model.clone();
    m.grid.n_cells = n_cells;
    m.time.n_steps = 2 * n_cells;
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_configs_round_trip_through_toml() {
        for v in [Variant::P1Quadratic, Variant::P2Monotone] {
            let c = ExperimentConfig::standard(v, Boundary::Neumann);
            let text = c.to_toml_string().unwrap();
            assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);
        }
    }

    #[test]
    fn unknown_keys_are_errors() {
        let mut text = ExperimentConfig::standard(Variant::P1Quadratic, Boundary::Neumann)
            .to_toml_string()
            .unwrap();
        text = text.replace("kappa = 0.3", "kappa = 0.3\nkapa = 0.2");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Toml(_))));
        let bad = "[model]\nvariant = \"p1_quadratic\"\n";
        assert!(ExperimentConfig::from_toml_str(bad).is_err());
    }

    #[test]
    fn sweep_points_follow_the_documented_order() {
        let base = standard_model(Variant::P1Quadratic, Boundary::Neumann);
        let s = SweepSection {
            kappa: Some(vec![0.1, 0.2, 0.3]),
            horizon: Some(vec![0.5, 1.0]),
            boundary: None,
            short_horizon: None,
        };
        let pts = s.points(&base);
        assert_eq!(pts.len(), 6);
        assert_eq!((pts[1].kappa, pts[1].horizon), (0.1, 1.0));
        assert_eq!(pts[2].kappa, 0.2);
        assert_eq!(pts[0].model.time.n_steps, 128);
    }

    #[test]
    fn solver_section_overrides_defaults() {
        let spec = ModelSpec::new(&standard_model(Variant::P2Monotone, Boundary::Neumann)).unwrap();
        let s = SolverSection {
            damping: Some(0.7),
            ..Default::default()
        };
        let c = s.resolve(&spec);
        assert_eq!(c.damping, 0.7);
        assert_eq!(c.tol_outer, SolverConfig::for_spec(&spec).tol_outer);
    }
}
