//! Concrete Hamiltonian / Lagrangian families, nonlocal couplings and their
//! structural constants.
//!
//! With `Z(mu)` the first moment of the control marginal:
//!
//! * `P1Quadratic`: `H = p^2/2 + kappa p Z + phi(x)`, so `D_pH = p + kappa Z`.
//! * `P2Monotone`: `L = a^2/2 + kappa a Z + phi(x)`. Under the pairing
//!   `H = sup_a [-p a - L]` this gives `H = (p + kappa Z)^2/2 - phi(x)` and
//!   again `D_pH = p + kappa Z`; the optimal control is `a* = -D_pH`.
//!
//! Couplings are `f = c_f eta*eta*m` and `g = chi (G0 + c_g eta*eta*m)`, where
//! `eta` is a normalized Gaussian truncated at four widths and `chi` is a
//! boundary cutoff (`sin` for Dirichlet, `1` for Neumann).

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{check_len, Error, Result};
use crate::grid::{gradient, Boundary, Grid1D, ScalarField, TimeMesh};
use crate::measures::ControlMeasure;

/// Growth exponent of the Hamiltonian in `p`.
pub const Q: f64 = 2.0;
/// Conjugate exponent `q / (q - 1)`.
pub const Q_PRIME: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    P1Quadratic,
    P2Monotone,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::P1Quadratic => "p1_quadratic",
            Variant::P2Monotone => "p2_monotone",
        }
    }
}

/// Which parametrized system a solve continues along: `lambda` scaling of the
/// Hamiltonian and data (`P1`) or `theta` scaling of the Lagrangian (`P2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    P1,
    P2,
}

impl Variant {
    pub fn problem(self) -> Problem {
        match self {
            Variant::P1Quadratic => Problem::P1,
            Variant::P2Monotone => Problem::P2,
        }
    }
}

/// A scalar profile sampled on the grid. `s` below is the normalized
/// coordinate `(x - x_lo) / (x_hi - x_lo)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldProfile {
    Zero,
    Constant { value: f64 },
    /// `amplitude cos(modes pi s)`
    Cosine { amplitude: f64, modes: u32 },
    /// `amplitude sin(modes pi s)`
    Sine { amplitude: f64, modes: u32 },
    /// `amplitude exp(-(x - center)^2 / (2 width^2))`
    Gaussian {
        #[serde(default = "one")]
        amplitude: f64,
        center: f64,
        width: f64,
    },
    /// Nodal values, one per grid node.
    Values { values: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

impl FieldProfile {
    pub fn sample(&self, grid: &Grid1D) -> Result<ScalarField> {
        let s = |x: f64| (x - grid.x_lo) / grid.width();
        Ok(match self {
            FieldProfile::Zero => vec![0.0; grid.n_nodes()],
            FieldProfile::Constant { value } => vec![*value; grid.n_nodes()],
            FieldProfile::Cosine { amplitude, modes } => {
                grid.sample(|x| amplitude * (*modes as f64 * PI * s(x)).cos())
            }
            FieldProfile::Sine { amplitude, modes } => {
                grid.sample(|x| amplitude * (*modes as f64 * PI * s(x)).sin())
            }
            FieldProfile::Gaussian {
                amplitude,
                center,
                width,
            } => {
                if *width <= 0.0 {
                    return Err(Error::Config(format!("gaussian width must be positive, got {width}")));
                }
                grid.sample(|x| amplitude * (-(x - center).powi(2) / (2.0 * width * width)).exp())
            }
            FieldProfile::Values { values } => {
                check_len(values.len(), grid.n_nodes())?;
                values.clone()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub x_lo: f64,
    #[serde(default = "one")]
    pub x_hi: f64,
    pub n_cells: usize,
    pub boundary: Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub horizon: f64,
    pub n_steps: usize,
}

/// Serializable description of a model; [`ModelSpec::new`] validates it and
/// precomputes everything the solvers need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub kappa: f64,
    pub nu: f64,
    #[serde(default)]
    pub c_f: f64,
    #[serde(default)]
    pub c_g: f64,
    pub kernel_width: f64,
    #[serde(default = "default_q0")]
    pub q0: f64,
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub potential: FieldProfile,
    pub terminal_base: FieldProfile,
    pub initial_density: FieldProfile,
}

fn default_q0() -> f64 {
    2.0
}

/// Structural constants of the family. See [`ModelConstants::derive`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    pub c0: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl ModelConstants {
    /// Constants for the linear-in-`Z` families.
    ///
    /// `P1Quadratic` (`lambda1 = lambda2 = 0`):
    /// * `|p + kappa Z| <= |p| + kappa (1/4 + Lambda^2)`, so `C0 >= 1` and
    ///   `lambda0 = kappa` bound `D_pH`.
    /// * `D_pH p - H = p^2/2 - phi >= p^2/C0 - C0` needs `C0 >= 2` and
    ///   `C0 >= |phi|`; the same `|phi|` bounds `H(., 0, .)`.
    /// * `|D_xH| = |phi'|` and `|g| <= |G0| + c_g max K`.
    ///
    /// `P2Monotone`:
    /// * `L >= (1 - kappa) a^2/2 - kappa Lambda^2/2 - |phi|` needs
    ///   `C0 >= 2/(1 - kappa)`.
    /// * `|L| + |L_x| <= (1 + kappa) a^2/2 + kappa Lambda^2/2 + |phi| + |phi'|`.
    /// * The control fixed point has `|Z| <= theta |p|_{L1(m)}`, so the sup
    ///   bound on controls holds with `C0 >= 1 + kappa`.
    /// * `|g| + |f| <= |G0| + (c_g + c_f) max K`.
    pub fn derive(
        variant: Variant,
        kappa: f64,
        phi_sup: f64,
        dphi_sup: f64,
        g_sup: f64,
        f_sup: f64,
    ) -> Self {
        match variant {
            Variant::P1Quadratic => Self {
                c0: [2.0, phi_sup, dphi_sup, g_sup, 1.0].into_iter().fold(0.0, f64::max),
                lambda0: kappa,
                lambda1: 0.0,
                lambda2: 0.0,
            },
            Variant::P2Monotone => Self {
                c0: [
                    2.0 / (1.0 - kappa),
                    (1.0 + kappa) / 2.0,
                    1.0 + kappa,
                    phi_sup + dphi_sup,
                    g_sup + f_sup,
                    1.0,
                ]
                .into_iter()
                .fold(0.0, f64::max),
                lambda0: kappa,
                lambda1: 0.0,
                lambda2: 0.0,
            },
        }
    }

    /// Upper limit for `lambda1` implied by `lambda0`, `lambda2` and `C0`.
    pub fn lambda1_limit(&self) -> f64 {
        (1.0 - self.lambda0).powf(Q_PRIME) / self.c0.powf(Q_PRIME) - self.c0 * self.lambda2
    }
}

/// A validated model on a concrete grid and time mesh.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub config: ModelConfig,
    pub variant: Variant,
    pub kappa: f64,
    pub nu: f64,
    pub c_f: f64,
    pub c_g: f64,
    pub kernel_width: f64,
    pub q: f64,
    pub q0: f64,
    pub grid: Grid1D,
    pub mesh: TimeMesh,
    pub potential: ScalarField,
    pub potential_slope: ScalarField,
    pub terminal_base: ScalarField,
    pub initial_density: ScalarField,
    pub cutoff: ScalarField,
    pub constants: ModelConstants,
    /// `A_ij = eta(x_i - x_j)`, reflected for Neumann, row-major.
    kernel: Vec<f64>,
    volumes: Vec<f64>,
}

impl ModelSpec {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let c = config;
        if !(c.kappa.is_finite() && c.kappa >= 0.0) {
            return Err(Error::Config(format!("kappa must be nonnegative, got {}", c.kappa)));
        }
        if c.kappa >= 1.0 {
            return Err(Error::SpecRejected {
                assumption: "A7",
                message: format!(
                    "control interaction kappa = {} must have Lipschitz constant in (0,1)",
                    c.kappa
                ),
            });
        }
        if !(c.nu > 0.0 && c.nu.is_finite()) {
            return Err(Error::Config(format!("nu must be positive, got {}", c.nu)));
        }
        if !(c.c_f >= 0.0 && c.c_g >= 0.0) {
            return Err(Error::Config("coupling strengths must be nonnegative".into()));
        }
        if !(c.kernel_width > 0.0) {
            return Err(Error::Config(format!("kernel_width must be positive, got {}", c.kernel_width)));
        }
        if !(1.0..=Q_PRIME).contains(&c.q0) {
            return Err(Error::SpecRejected {
                assumption: "A4",
                message: format!("q0 = {} must lie in [1, {Q_PRIME}]", c.q0),
            });
        }
        if c.variant == Variant::P1Quadratic && c.c_f != 0.0 {
            return Err(Error::SpecRejected {
                assumption: "A3",
                message: "the quadratic family runs with f = 0; set c_f = 0".into(),
            });
        }
        let grid = Grid1D::new(c.grid.x_lo, c.grid.x_hi, c.grid.n_cells, c.grid.boundary)?;
        if c.variant == Variant::P2Monotone && grid.boundary == Boundary::Dirichlet && c.c_g != 0.0 {
            return Err(Error::SpecRejected {
                assumption: "monotone coupling",
                message: "the monotone family with Dirichlet boundary needs c_g = 0".into(),
            });
        }
        let mesh = TimeMesh::new(c.time.horizon, c.time.n_steps)?;

        let potential = c.potential.sample(&grid)?;
        let potential_slope = gradient(&potential, &grid)?;
        let terminal_base = c.terminal_base.sample(&grid)?;
        let cutoff = match grid.boundary {
            Boundary::Neumann => vec![1.0; grid.n_nodes()],
            Boundary::Dirichlet => {
                let mut chi = grid.sample(|x| (PI * (x - grid.x_lo) / grid.width()).sin());
                chi[0] = 0.0;
                chi[grid.n_cells] = 0.0;
                chi
            }
        };
        let initial_density = normalized_density(&c.initial_density, &grid)?;
        let kernel = kernel_matrix(&grid, c.kernel_width);
        let volumes = grid.control_volumes();

        let n = grid.n_nodes();
        let mut k_max = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let kij: f64 = (0..n)
                    .map(|l| kernel[i * n + l] * volumes[l] * kernel[l * n + j])
                    .sum();
                k_max = k_max.max(kij);
            }
        }
        let sup = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let constants = ModelConstants::derive(
            c.variant,
            c.kappa,
            sup(&potential),
            sup(&potential_slope),
            sup(&terminal_base) + c.c_g * k_max,
            c.c_f * k_max,
        );
        if !(constants.lambda1 < constants.lambda1_limit()) {
            return Err(Error::SpecRejected {
                assumption: "A6",
                message: format!(
                    "lambda1 = {} is not below (1-lambda0)^q'/C0^q' - C0 lambda2 = {}",
                    constants.lambda1,
                    constants.lambda1_limit()
                ),
            });
        }

        Ok(Self {
            config: c.clone(),
            variant: c.variant,
            kappa: c.kappa,
            nu: c.nu,
            c_f: c.c_f,
            c_g: c.c_g,
            kernel_width: c.kernel_width,
            q: Q,
            q0: c.q0,
            grid,
            mesh,
            potential,
            potential_slope,
            terminal_base,
            initial_density,
            cutoff,
            constants,
            kernel,
            volumes,
        })
    }

    pub fn problem(&self) -> Problem {
        self.variant.problem()
    }

    pub fn potential_at(&self, x: f64) -> f64 {
        self.grid.interpolate_clamped(&self.potential, x)
    }

    /// `H` at a state with potential value `phi`.
    pub fn hamiltonian_value(&self, phi: f64, p: f64, z: f64) -> f64 {
        match self.variant {
            Variant::P1Quadratic => 0.5 * p * p + self.kappa * p * z + phi,
            Variant::P2Monotone => 0.5 * (p + self.kappa * z).powi(2) - phi,
        }
    }

    pub fn dp_hamiltonian_value(&self, p: f64, z: f64) -> f64 {
        p + self.kappa * z
    }

    pub fn hamiltonian(&self, x: f64, p: f64, mu: &ControlMeasure) -> f64 {
        self.hamiltonian_value(self.potential_at(x), p, mu.first_moment())
    }

    pub fn dp_hamiltonian(&self, _x: f64, p: f64, mu: &ControlMeasure) -> f64 {
        self.dp_hamiltonian_value(p, mu.first_moment())
    }

    pub fn lagrangian(&self, x: f64, alpha: f64, mu: &ControlMeasure) -> Result<f64> {
        self.require_lagrangian()?;
        let z = mu.first_moment();
        Ok(0.5 * alpha * alpha + self.kappa * alpha * z + self.potential_at(x))
    }

    pub fn d_alpha_lagrangian(&self, _x: f64, alpha: f64, mu: &ControlMeasure) -> Result<f64> {
        self.require_lagrangian()?;
        Ok(alpha + self.kappa * mu.first_moment())
    }

    fn require_lagrangian(&self) -> Result<()> {
        match self.variant {
            Variant::P2Monotone => Ok(()),
            v => Err(Error::UnsupportedVariant(v.name())),
        }
    }

    /// `f(m)` for a density `m` sampled at the nodes.
    pub fn coupling_f(&self, m: &[f64]) -> Result<ScalarField> {
        if self.c_f == 0.0 {
            check_len(m.len(), self.grid.n_nodes())?;
            return Ok(vec![0.0; m.len()]);
        }
        let mut f = self.double_smooth(m)?;
        f.iter_mut().for_each(|v| *v *= self.c_f);
        Ok(f)
    }

    /// `g(m_T)` for a density sampled at the nodes.
    pub fn coupling_g(&self, m_t: &[f64]) -> Result<ScalarField> {
        let smooth = if self.c_g == 0.0 {
            check_len(m_t.len(), self.grid.n_nodes())?;
            vec![0.0; m_t.len()]
        } else {
            self.double_smooth(m_t)?
        };
        Ok((0..m_t.len())
            .map(|i| self.cutoff[i] * (self.terminal_base[i] + self.c_g * smooth[i]))
            .collect())
    }

    /// Quadrature of `eta * eta * m`: `A V A V m`.
    fn double_smooth(&self, m: &[f64]) -> Result<ScalarField> {
        check_len(m.len(), self.grid.n_nodes())?;
        if let Some(v) = m.iter().find(|&&v| v < -1e-12) {
            return Err(Error::InvalidMeasure(format!("negative density entry {v}")));
        }
        let once = self.smooth(m);
        Ok(self.smooth(&once))
    }

    /// Quadrature of `eta * m`: `A V m`.
    pub fn smooth(&self, m: &[f64]) -> ScalarField {
        let n = self.grid.n_nodes();
        let vm: Vec<f64> = m.iter().zip(&self.volumes).map(|(a, b)| a * b).collect();
        (0..n)
            .map(|i| self.kernel[i * n..(i + 1) * n].iter().zip(&vm).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Scaled evaluators `H^theta`, `D_pH^theta`, `L^theta`.
    pub fn theta_scale(&self, theta: f64) -> ThetaScaled<'_> {
        assert!((0.0..=1.0).contains(&theta), "theta must lie in [0,1], got {theta}");
        ThetaScaled { spec: self, theta }
    }

    /// Brute-force Legendre oracle. See [`LegendreCheck`].
    pub fn legendre_check(
        &self,
        x: f64,
        p: f64,
        mu: &ControlMeasure,
        alpha_grid_halfwidth: f64,
        n_alpha: usize,
    ) -> Result<LegendreCheck> {
        self.require_lagrangian()?;
        if n_alpha < 3 {
            return Err(Error::Config(format!("n_alpha must be at least 3, got {n_alpha}")));
        }
        let step = 2.0 * alpha_grid_halfwidth / (n_alpha - 1) as f64;
        let (mut best, mut argmax) = (f64::NEG_INFINITY, 0.0);
        for j in 0..n_alpha {
            let a = -alpha_grid_halfwidth + j as f64 * step;
            let v = -p * a - self.lagrangian(x, a, mu)?;
            if v > best {
                best = v;
                argmax = a;
            }
        }
        let closed = self.hamiltonian(x, p, mu);
        Ok(LegendreCheck {
            brute_force: best,
            closed_form: closed,
            discrepancy: (closed - best).abs(),
            argmax,
            alpha_step: step,
        })
    }

    /// Monotonicity integral `int (L(mu1) - L(mu2)) d(mu1 - mu2)` for two control
    /// measures on a common support; nonnegative for a monotone Lagrangian.
    pub fn lagrangian_monotonicity(&self, mu1: &ControlMeasure, mu2: &ControlMeasure) -> Result<f64> {
        self.require_lagrangian()?;
        let mut total = 0.0;
        for (mu, sign) in [(mu1, 1.0), (mu2, -1.0)] {
            for i in 0..mu.x.len() {
                let d = self.lagrangian(mu.x[i], mu.alpha[i], mu1)?
                    - self.lagrangian(mu.x[i], mu.alpha[i], mu2)?;
                total += sign * mu.w[i] * d;
            }
        }
        Ok(total)
    }

    /// Bound on the control marginal used to seed the second start of the
    /// monotone fixed-point probe: `C0 theta (1 + |p|_inf + Lambda_q' bound)`.
    pub fn control_sup_bound(&self, theta: f64, p_sup: f64, lambda_qprime: f64) -> f64 {
        self.constants.c0 * theta * (1.0 + p_sup + lambda_qprime)
    }
}

/// Output of [`ModelSpec::legendre_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegendreCheck {
    pub brute_force: f64,
    pub closed_form: f64,
    pub discrepancy: f64,
    pub argmax: f64,
    pub alpha_step: f64,
}

/// `H^theta(p, mu) = theta H(p, Theta mu)` with `Theta` dividing controls by
/// `theta`; at `theta = 0` everything vanishes.
#[derive(Debug, Clone, Copy)]
pub struct ThetaScaled<'a> {
    pub spec: &'a ModelSpec,
    pub theta: f64,
}

impl ThetaScaled<'_> {
    pub fn hamiltonian_value(&self, phi: f64, p: f64, z: f64) -> f64 {
        if self.theta == 0.0 {
            return 0.0;
        }
        self.theta * self.spec.hamiltonian_value(phi, p, z / self.theta)
    }

    pub fn dp_hamiltonian_value(&self, p: f64, z: f64) -> f64 {
        if self.theta == 0.0 {
            return 0.0;
        }
        self.theta * p + self.spec.kappa * z
    }

    pub fn hamiltonian(&self, x: f64, p: f64, mu: &ControlMeasure) -> f64 {
        self.hamiltonian_value(self.spec.potential_at(x), p, mu.first_moment())
    }

    pub fn dp_hamiltonian(&self, _x: f64, p: f64, mu: &ControlMeasure) -> f64 {
        self.dp_hamiltonian_value(p, mu.first_moment())
    }

    /// `L^theta(a, mu) = theta L(a / theta, Theta mu)`.
    pub fn lagrangian(&self, x: f64, alpha: f64, mu: &ControlMeasure) -> Result<f64> {
        self.spec.require_lagrangian()?;
        let t = self.theta;
        if t == 0.0 {
            return Err(Error::Config("L^theta is undefined at theta = 0".into()));
        }
        let z = mu.first_moment();
        Ok(alpha * alpha / (2.0 * t) + self.spec.kappa * alpha * z / t + t * self.spec.potential_at(x))
    }

    pub fn d_alpha_lagrangian(&self, _x: f64, alpha: f64, mu: &ControlMeasure) -> Result<f64> {
        self.spec.require_lagrangian()?;
        let t = self.theta;
        if t == 0.0 {
            return Err(Error::Config("L^theta is undefined at theta = 0".into()));
        }
        Ok((alpha + self.spec.kappa * mu.first_moment()) / t)
    }
}

/// One value of the continuation parameter: `lambda` for `P1`, `theta` for
/// `P2`. Collects every place the parameter enters the system.
///
/// * `P1` at `lambda`: control `-lambda D_pH`, Hamiltonian term `lambda H`,
///   `u(T) = lambda g`, `m(0) = lambda m0`, no source.
/// * `P2` at `theta`: control `-D_pH^theta`, Hamiltonian term `H^theta`,
///   source `theta f`, `u(T) = theta g`, `m(0) = m0`.
#[derive(Debug, Clone, Copy)]
pub struct Stage<'a> {
    pub spec: &'a ModelSpec,
    pub scale: f64,
}

impl<'a> Stage<'a> {
    pub fn new(spec: &'a ModelSpec, scale: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&scale) {
            return Err(Error::Config(format!("continuation value {scale} outside [0,1]")));
        }
        Ok(Self { spec, scale })
    }

    pub fn problem(&self) -> Problem {
        self.spec.problem()
    }

    /// The drift multiplier `D` with control `alpha = -D(p, Z)`.
    pub fn dp(&self, p: f64, z: f64) -> f64 {
        match self.problem() {
            Problem::P1 => self.scale * self.spec.dp_hamiltonian_value(p, z),
            Problem::P2 => self.spec.theta_scale(self.scale).dp_hamiltonian_value(p, z),
        }
    }

    pub fn control(&self, p: f64, z: f64) -> f64 {
        -self.dp(p, z)
    }

    /// The Hamiltonian term of the backward equation at node `i`.
    pub fn hamiltonian(&self, i: usize, p: f64, z: f64) -> f64 {
        let phi = self.spec.potential[i];
        match self.problem() {
            Problem::P1 => self.scale * self.spec.hamiltonian_value(phi, p, z),
            Problem::P2 => self.spec.theta_scale(self.scale).hamiltonian_value(phi, p, z),
        }
    }

    /// Contraction factor of the control fixed-point map on a measure of
    /// mass `mass`.
    pub fn contraction_factor(&self, mass: f64) -> f64 {
        match self.problem() {
            Problem::P1 => self.scale * self.spec.kappa * mass,
            Problem::P2 => {
                if self.scale == 0.0 {
                    0.0
                } else {
                    self.spec.kappa * mass
                }
            }
        }
    }

    pub fn source(&self, m: &[f64]) -> Result<ScalarField> {
        match self.problem() {
            Problem::P1 => {
                check_len(m.len(), self.spec.grid.n_nodes())?;
                Ok(vec![0.0; m.len()])
            }
            Problem::P2 => {
                let mut f = self.spec.coupling_f(m)?;
                f.iter_mut().for_each(|v| *v *= self.scale);
                Ok(f)
            }
        }
    }

    pub fn terminal(&self, m_t: &[f64]) -> Result<ScalarField> {
        let mut g = self.spec.coupling_g(m_t)?;
        g.iter_mut().for_each(|v| *v *= self.scale);
        Ok(g)
    }

    pub fn initial_density(&self) -> ScalarField {
        match self.problem() {
            Problem::P1 => self.spec.initial_density.iter().map(|m| m * self.scale).collect(),
            Problem::P2 => self.spec.initial_density.clone(),
        }
    }
}

fn normalized_density(profile: &FieldProfile, grid: &Grid1D) -> Result<ScalarField> {
    let mut m = profile.sample(grid)?;
    if let Some(v) = m.iter().find(|&&v| v < 0.0) {
        return Err(Error::InvalidMeasure(format!("initial density has negative entry {v}")));
    }
    if grid.boundary == Boundary::Dirichlet {
        m[0] = 0.0;
        m[grid.n_cells] = 0.0;
    }
    let mass = crate::grid::integrate(&m, grid)?;
    if !(mass > 0.0) {
        return Err(Error::InvalidMeasure("initial density has zero mass".into()));
    }
    m.iter_mut().for_each(|v| *v /= mass);
    Ok(m)
}

/// Truncated Gaussian of width `sigma`, normalized to unit mass on the line.
pub fn eta(z: f64, sigma: f64) -> f64 {
    if z.abs() > 4.0 * sigma {
        return 0.0;
    }
    let norm = sigma * (2.0 * PI).sqrt() * erf(4.0 / SQRT_2);
    (-z * z / (2.0 * sigma * sigma)).exp() / norm
}

fn kernel_matrix(grid: &Grid1D, sigma: f64) -> Vec<f64> {
    let n = grid.n_nodes();
    let x = grid.nodes();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut v = eta(x[i] - x[j], sigma);
            if grid.boundary == Boundary::Neumann {
                v += eta(x[i] + x[j] - 2.0 * grid.x_lo, sigma) + eta(x[i] + x[j] - 2.0 * grid.x_hi, sigma);
            }
            a[i * n + j] = v;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::DiscreteMeasure;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn config(variant: Variant, kappa: f64, boundary: Boundary) -> ModelConfig {
        ModelConfig {
            variant,
            kappa,
            nu: 0.2,
            c_f: 0.0,
            c_g: 0.0,
            kernel_width: 0.1,
            q0: 2.0,
            grid: GridConfig {
                x_lo: 0.0,
                x_hi: 1.0,
                n_cells: 32,
                boundary,
            },
            time: TimeConfig {
                horizon: 1.0,
                n_steps: 64,
            },
            potential: FieldProfile::Zero,
            terminal_base: FieldProfile::Zero,
            initial_density: FieldProfile::Constant { value: 1.0 },
        }
    }

    fn atom(alpha: f64) -> ControlMeasure {
        ControlMeasure {
            x: vec![0.5],
            alpha: vec![alpha],
            w: vec![1.0],
        }
    }

    fn random_measure(rng: &mut ChaCha8Rng, n: usize) -> ControlMeasure {
        let mut w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let s: f64 = w.iter().sum::<f64>() / rng.gen_range(0.2..1.0);
        w.iter_mut().for_each(|v| *v /= s);
        ControlMeasure {
            x: (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
            alpha: (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            w,
        }
    }

    #[test]
    fn hamiltonian_examples() {
        let s = ModelSpec::new(&config(Variant::P1Quadratic, 0.0, Boundary::Neumann)).unwrap();
        assert_eq!(s.hamiltonian(0.3, 2.0, &atom(0.0)), 2.0);
        assert_eq!(s.dp_hamiltonian(0.3, 3.0, &atom(0.0)), 3.0);
        let s = ModelSpec::new(&config(Variant::P1Quadratic, 0.5, Boundary::Neumann)).unwrap();
        assert!((s.hamiltonian(0.5, 1.0, &atom(-2.0 / 3.0)) - 1.0 / 6.0).abs() < 1e-15);
        assert!((s.dp_hamiltonian(0.5, 1.0, &atom(-2.0 / 3.0)) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn theta_scaling_examples() {
        let s = ModelSpec::new(&config(Variant::P1Quadratic, 0.0, Boundary::Neumann)).unwrap();
        assert_eq!(s.theta_scale(0.5).hamiltonian(0.2, 2.0, &atom(0.0)), 1.0);
        let s = ModelSpec::new(&config(Variant::P2Monotone, 0.4, Boundary::Neumann)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mu = random_measure(&mut rng, 6);
            let (x, p) = (rng.gen::<f64>(), rng.gen_range(-4.0..4.0));
            let one = s.theta_scale(1.0);
            assert!((one.hamiltonian(x, p, &mu) - s.hamiltonian(x, p, &mu)).abs() < 1e-13);
            assert!((one.dp_hamiltonian(x, p, &mu) - s.dp_hamiltonian(x, p, &mu)).abs() < 1e-13);
            let zero = s.theta_scale(0.0);
            assert_eq!(zero.hamiltonian(x, p, &mu), 0.0);
            assert_eq!(zero.dp_hamiltonian(x, p, &mu), 0.0);
        }
    }

    #[test]
    fn scaled_pairs_are_legendre_dual() {
        let mut c = config(Variant::P2Monotone, 0.3, Boundary::Neumann);
        c.potential = FieldProfile::Cosine { amplitude: 0.2, modes: 1 };
        let s = ModelSpec::new(&c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let mu = random_measure(&mut rng, 5);
            let (x, p) = (rng.gen::<f64>(), rng.gen_range(-3.0..3.0));
            let th = s.theta_scale(rng.gen_range(0.1..1.0));
            let a = -th.dp_hamiltonian(x, p, &mu);
            assert!((th.d_alpha_lagrangian(x, a, &mu).unwrap() + p).abs() < 1e-10);
            let h = -p * a - th.lagrangian(x, a, &mu).unwrap();
            assert!((h - th.hamiltonian(x, p, &mu)).abs() < 1e-10);
        }
    }

    #[test]
    fn lagrangian_examples() {
        let mut c = config(Variant::P2Monotone, 0.0, Boundary::Neumann);
        c.potential = FieldProfile::Constant { value: 0.25 };
        let s = ModelSpec::new(&c).unwrap();
        assert!((s.lagrangian(0.4, 2.0, &atom(1.0)).unwrap() - 2.25).abs() < 1e-15);
        let p1 = ModelSpec::new(&config(Variant::P1Quadratic, 0.0, Boundary::Neumann)).unwrap();
        assert!(matches!(
            p1.lagrangian(0.4, 2.0, &atom(1.0)),
            Err(Error::UnsupportedVariant(_))
        ));
        let s = ModelSpec::new(&config(Variant::P2Monotone, 0.35, Boundary::Neumann)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let mu1 = random_measure(&mut rng, 7);
            let mut mu2 = random_measure(&mut rng, 7);
            mu2.w = mu1.w.clone();
            let (z1, z2) = (mu1.first_moment(), mu2.first_moment());
            let a8 = s.lagrangian_monotonicity(&mu1, &mu2).unwrap();
            assert!(a8 >= -1e-12);
            assert!((a8 - 0.35 * (z1 - z2).powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn dp_hamiltonian_matches_finite_difference() {
        let mut c = config(Variant::P1Quadratic, 0.6, Boundary::Neumann);
        c.potential = FieldProfile::Cosine { amplitude: 0.3, modes: 2 };
        let s = ModelSpec::new(&c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let mu = random_measure(&mut rng, 4);
            let (x, p) = (rng.gen::<f64>(), rng.gen_range(-5.0..5.0));
            let e = 1e-5;
            let fd = (s.hamiltonian(x, p + e, &mu) - s.hamiltonian(x, p - e, &mu)) / (2.0 * e);
            assert!((fd - s.dp_hamiltonian(x, p, &mu)).abs() < 1e-6);
        }
    }

    #[test]
    fn declared_constants_hold_on_samples() {
        for variant in [Variant::P1Quadratic, Variant::P2Monotone] {
            let mut c = config(variant, 0.45, Boundary::Neumann);
            c.potential = FieldProfile::Cosine { amplitude: 0.7, modes: 2 };
            let s = ModelSpec::new(&c).unwrap();
            let k = s.constants;
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for _ in 0..1000 {
                let mu = random_measure(&mut rng, 5);
                let (x, p) = (rng.gen::<f64>(), rng.gen_range(-10.0..10.0));
                let lq0 = mu.lambda_q(s.q0).powf(Q_PRIME);
                let dp = s.dp_hamiltonian(x, p, &mu);
                let h = s.hamiltonian(x, p, &mu);
                match variant {
                    Variant::P1Quadratic => {
                        assert!(dp.abs() <= k.c0 * (1.0 + p.abs()) + k.lambda0 * lq0 + 1e-12);
                        let lhs = dp * p - h;
                        assert!(lhs >= (p * p - k.lambda1 * lq0) / k.c0 - k.c0 - 1e-12);
                        assert!(s.hamiltonian(x, 0.0, &mu).abs() <= k.lambda2 * lq0 + k.c0);
                    }
                    Variant::P2Monotone => {
                        let a = rng.gen_range(-10.0..10.0);
                        let l = s.lagrangian(x, a, &mu).unwrap();
                        let l2 = mu.lambda_q(Q_PRIME).powf(Q_PRIME);
                        assert!(l >= a * a / k.c0 - k.c0 * (1.0 + l2) - 1e-12);
                        let i = s.grid.nearest_node(x);
                        let lx = s.potential_slope[i].abs();
                        let bound = k.c0 * (1.0 + a * a + l2);
                        assert!(l.abs() + lx <= bound + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn kappa_at_least_one_is_rejected() {
        let err = ModelSpec::new(&config(Variant::P1Quadratic, 1.5, Boundary::Neumann)).unwrap_err();
        assert!(matches!(err, Error::SpecRejected { assumption: "A7", .. }));
        assert!(err.to_string().contains("A7"));
    }

    #[test]
    fn coupling_examples() {
        let mut c = config(Variant::P2Monotone, 0.2, Boundary::Neumann);
        let s = ModelSpec::new(&c).unwrap();
        let m = s.initial_density.clone();
        assert!(s.coupling_f(&m).unwrap().iter().all(|&v| v == 0.0));

        c.c_f = 0.5;
        c.c_g = 0.3;
        let s = ModelSpec::new(&c).unwrap();
        let g = &s.grid;
        let m1 = normalized_density(&FieldProfile::Gaussian { amplitude: 1.0, center: 0.3, width: 0.1 }, g).unwrap();
        let m2 = normalized_density(&FieldProfile::Gaussian { amplitude: 1.0, center: 0.6, width: 0.2 }, g).unwrap();
        let d: Vec<f64> = m1.iter().zip(&m2).map(|(a, b)| a - b).collect();
        let f1 = s.coupling_f(&m1).unwrap();
        let f2 = s.coupling_f(&m2).unwrap();
        let df: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a - b).collect();
        let pairing = crate::grid::integrate(&df.iter().zip(&d).map(|(a, b)| a * b).collect::<Vec<_>>(), g).unwrap();
        let sd = s.smooth(&d);
        let norm2 = crate::grid::integrate(&sd.iter().map(|v| v * v).collect::<Vec<_>>(), g).unwrap();
        assert!(pairing >= 0.0);
        assert!((pairing - 0.5 * norm2).abs() < 1e-12 * (1.0 + pairing));
        assert!(s.coupling_f(&[-1.0; 33]).is_err());

        let mut c = config(Variant::P1Quadratic, 0.2, Boundary::Dirichlet);
        c.c_g = 0.4;
        c.terminal_base = FieldProfile::Constant { value: 1.0 };
        let s = ModelSpec::new(&c).unwrap();
        let gt = s.coupling_g(&s.initial_density).unwrap();
        assert_eq!(gt[0], 0.0);
        assert_eq!(gt[32], 0.0);
    }

    #[test]
    fn smoothing_kernel_has_unit_mass_away_from_boundary() {
        let mut c = config(Variant::P2Monotone, 0.2, Boundary::Neumann);
        c.grid.n_cells = 200;
        let s = ModelSpec::new(&c).unwrap();
        let ones = vec![1.0; 201];
        // reflection preserves mass of constants up to to the boundary
        let sm = s.smooth(&ones);
        assert!(sm.iter().all(|v| (v - 1.0).abs() < 1e-3));
        let _ = DiscreteMeasure::from_density(&s.grid, &sm).unwrap();
    }

    #[test]
    fn legendre_oracle_converges() {
        let s = ModelSpec::new(&config(Variant::P2Monotone, 0.0, Boundary::Neumann)).unwrap();
        let chk = s.legendre_check(0.5, 1.0, &atom(0.0), 4.0, 401).unwrap();
        assert!((chk.brute_force - 0.5).abs() < chk.alpha_step.powi(2));
        assert!((chk.argmax + 1.0).abs() <= chk.alpha_step);
        let worst = |n: usize| {
            (0..40)
                .map(|k| s.legendre_check(0.5, -2.0 + 0.1 * k as f64, &atom(0.0), 4.0, n).unwrap())
                .fold((0.0f64, 0.0), |acc, c| (acc.0.max(c.discrepancy), c.alpha_step))
        };
        let (coarse, step) = worst(41);
        let (fine, _) = worst(81);
        assert!(coarse <= 2.0 * step * step);
        // halving the step cuts the worst-case gap by about four
        assert!(fine <= coarse / 3.0);
    }
}
