//! Numerical laboratory for one-dimensional mean field games of controls on
//! an interval with absorbing (Dirichlet) or reflecting (Neumann) boundaries.

pub mod cli;
pub mod config;
pub mod coupler;
pub mod error;
pub mod estimates;
pub mod fp;
pub mod grid;
pub mod io;
pub mod hjb;
pub mod measures;
pub mod model;
pub mod mu_fixed_point;
pub mod particles;

pub use error::{Error, Result};
