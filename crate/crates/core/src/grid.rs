//! Uniform space and time discretization of `[0,T] x [x_lo, x_hi]`.
//!
//! Fields are node-centered: a field on a grid with `n_cells` cells holds
//! `n_cells + 1` values, one per node `x_i = x_lo + i h`. Nodes `0` and
//! `n_cells` are boundary nodes. The finite-volume control volume of node `i`
//! is `h` in the interior and `h / 2` at the two boundary nodes, so that
//! `sum_i V_i f_i` coincides with the trapezoid rule.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// One scalar per grid node (`u`, `m`, `phi`, ...).
pub type ScalarField = Vec<f64>;
/// One vector per grid node; in one space dimension a vector is a scalar.
pub type VectorField = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// `u = m = 0` on the boundary; players are absorbed.
    Dirichlet,
    /// Zero normal derivative of `u` and zero flux of `m`; players reflect.
    Neumann,
}

impl Boundary {
    pub fn name(self) -> &'static str {
        match self {
            Boundary::Dirichlet => "dirichlet",
            Boundary::Neumann => "neumann",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_cells: usize,
    pub h: f64,
    pub boundary: Boundary,
}

impl Grid1D {
    pub fn new(x_lo: f64, x_hi: f64, n_cells: usize, boundary: Boundary) -> Result<Self> {
        if n_cells < 2 {
            return Err(Error::Mesh(format!("need at least 2 cells, got {n_cells}")));
        }
        if !(x_lo.is_finite() && x_hi.is_finite() && x_hi > x_lo) {
            return Err(Error::Mesh(format!("empty interval [{x_lo}, {x_hi}]")));
        }
        Ok(Self {
            x_lo,
            x_hi,
            n_cells,
            h: (x_hi - x_lo) / n_cells as f64,
            boundary,
        })
    }

    /// Unit interval `[0, 1]`.
    pub fn unit(n_cells: usize, boundary: Boundary) -> Result<Self> {
        Self::new(0.0, 1.0, n_cells, boundary)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells + 1
    }

    pub fn width(&self) -> f64 {
        self.x_hi - self.x_lo
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n_cells {
            self.x_hi
        } else {
            self.x_lo + i as f64 * self.h
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.node(i)).collect()
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        i == 0 || i == self.n_cells
    }

    /// Control-volume (trapezoid) weights `V_i`.
    pub fn control_volumes(&self) -> Vec<f64> {
        let mut v = vec![self.h; self.n_nodes()];
        v[0] = 0.5 * self.h;
        v[self.n_cells] = 0.5 * self.h;
        v
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        self.nodes().into_iter().map(f).collect()
    }

    /// Index of the node whose control volume contains `x`.
    pub fn nearest_node(&self, x: f64) -> usize {
        let s = ((x - self.x_lo) / self.h).round();
        (s.max(0.0) as usize).min(self.n_cells)
    }

    /// Piecewise-linear interpolation of a node field at `x`.
    pub fn interpolate(&self, field: &[f64], x: f64) -> Result<f64> {
        check_len(field.len(), self.n_nodes())?;
        let tol = 1e-12 * self.width();
        if !(x >= self.x_lo - tol && x <= self.x_hi + tol) {
            return Err(Error::OutsideGrid(x));
        }
        Ok(self.interpolate_clamped(field, x))
    }

    pub(crate) fn interpolate_clamped(&self, field: &[f64], x: f64) -> f64 {
        let s = ((x - self.x_lo) / self.h).clamp(0.0, self.n_cells as f64);
        let i = (s.floor() as usize).min(self.n_cells - 1);
        let frac = s - i as f64;
        (1.0 - frac) * field[i] + frac * field[i + 1]
    }

    /// Gradient used by the solvers. Interior nodes use centered differences.
    /// Neumann boundary nodes use the mirrored ghost node, which makes the
    /// discrete normal derivative exactly zero; Dirichlet boundary nodes use
    /// the one-sided second-order stencil of [`gradient`].
    pub fn solver_gradient(&self, field: &[f64]) -> VectorField {
        let n = self.n_cells;
        let mut g = vec![0.0; n + 1];
        for i in 1..n {
            g[i] = (field[i + 1] - field[i - 1]) / (2.0 * self.h);
        }
        if self.boundary == Boundary::Dirichlet {
            g[0] = (-3.0 * field[0] + 4.0 * field[1] - field[2]) / (2.0 * self.h);
            g[n] = (3.0 * field[n] - 4.0 * field[n - 1] + field[n - 2]) / (2.0 * self.h);
        }
        g
    }
}

/// Uniform time mesh `t_k = k dt`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeMesh {
    pub horizon: f64,
    pub n_steps: usize,
    pub dt: f64,
}

impl TimeMesh {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::Mesh("need at least one time step".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Mesh(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self {
            horizon,
            n_steps,
            dt: horizon / n_steps as f64,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.n_steps + 1
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }
}

/// Centered differences in the interior, one-sided second-order differences
/// at the two boundary nodes.
pub fn gradient(field: &[f64], grid: &Grid1D) -> Result<VectorField> {
    check_len(field.len(), grid.n_nodes())?;
    let n = grid.n_cells;
    let h = grid.h;
    let mut g = vec![0.0; n + 1];
    for i in 1..n {
        g[i] = (field[i + 1] - field[i - 1]) / (2.0 * h);
    }
    g[0] = (-3.0 * field[0] + 4.0 * field[1] - field[2]) / (2.0 * h);
    g[n] = (3.0 * field[n] - 4.0 * field[n - 1] + field[n - 2]) / (2.0 * h);
    Ok(g)
}

/// Trapezoid rule.
pub fn integrate(field: &[f64], grid: &Grid1D) -> Result<f64> {
    check_len(field.len(), grid.n_nodes())?;
    Ok(weighted_sum(field, &grid.control_volumes()))
}

pub(crate) fn weighted_sum(field: &[f64], weights: &[f64]) -> f64 {
    field.iter().zip(weights).map(|(f, w)| f * w).sum()
}

/// Solve a tridiagonal system by the Thomas algorithm. `lower[0]` and
/// `upper[n-1]` are ignored.
pub(crate) fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot == 0.0 {
        return Err(Error::SingularSystem(0));
    }
    c[0] = upper[0] / pivot;
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i] * c[i - 1];
        if pivot == 0.0 {
            return Err(Error::SingularSystem(i));
        }
        c[i] = if i + 1 < n { upper[i] / pivot } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / pivot;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// Implicit diffusion operator `(I - dt nu Laplacian)` on the node field with
/// the grid's boundary rule, returned as tridiagonal bands. Dirichlet rows at
/// the boundary are identity rows. Neumann rows use the mirrored ghost node,
/// which is also the finite-volume half-cell balance with zero boundary flux.
pub(crate) fn implicit_diffusion_bands(grid: &Grid1D, nu: f64, dt: f64) -> [Vec<f64>; 3] {
    let n = grid.n_nodes();
    let r = nu * dt / (grid.h * grid.h);
    let mut lower = vec![-r; n];
    let mut diag = vec![1.0 + 2.0 * r; n];
    let mut upper = vec![-r; n];
    match grid.boundary {
        Boundary::Dirichlet => {
            diag[0] = 1.0;
            upper[0] = 0.0;
            diag[n - 1] = 1.0;
            lower[n - 1] = 0.0;
        }
        Boundary::Neumann => {
            upper[0] = -2.0 * r;
            lower[n - 1] = -2.0 * r;
        }
    }
    lower[0] = 0.0;
    upper[n - 1] = 0.0;
    [lower, diag, upper]
}
