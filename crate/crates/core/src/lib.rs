//! Diffusion-based spatio-temporal Matérn fields.
//!
//! The crate has two halves. [`params`] and [`spectral`] evaluate the
//! continuous model exactly (up to quadrature), and serve as the oracle for
//! the sparse finite-element representation built by [`fem`] and [`gmrf`].
//! [`solver`] factorizes the resulting precisions for sampling and
//! conditioning, and [`priors`] adds penalised-complexity priors and MAP
//! fitting on top.

pub mod error;
pub mod fem;
pub mod gmrf;
pub mod params;
pub mod priors;
pub mod quadrature;
pub mod solver;
pub mod sparse;
pub mod special;
pub mod spectral;

pub use error::{Error, Result};
