//! Numerical toolkit for concentration layers on a surface that meets the
//! domain boundary at a right angle: the 1D spike profile and its eigenpair,
//! disk charts with boundary interaction coefficients, Robin spectra of the
//! stability operator, resonance-avoiding selection of the small parameter,
//! layered approximate solutions, and residual verification in weighted
//! norms.

pub mod chart;
pub mod bessel;
pub mod error;
pub mod grid;
pub mod layers;
pub mod polar;
pub mod profile;
pub mod resonance;
pub mod spectrum;
pub mod strip;

pub use error::{Error, Result};
