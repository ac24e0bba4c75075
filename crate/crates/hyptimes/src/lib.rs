//! Numerical toolkit for Pliss times, (reverse) hyperbolic times, the Linear
//! Poincaré Flow and trajectory classification for smooth maps and flows.
//!
//! Modules, bottom-up:
//! - [`linalg`]: small dense kernels (Jacobi SVD, eigenvalues, expm)
//! - [`geometry`]: charts with periodic coordinates, projections, normal frames
//! - [`flow`]: systems, RK4 with the variational equation, map iteration
//! - [`pliss`]: Pliss times of sequences and Pliss sets of sampled functions
//! - [`lpf`]: Linear Poincaré Flow, generators, additivity, exponents
//! - [`hyptimes`]: exponent series, hyperbolic times, contracting balls
//! - [`systems`] and [`expr`]: built-in and configured systems
//! - [`classify`]: return maps, singularities, cusp sections, verdicts

pub mod classify;
pub mod error;
pub mod expr;
pub mod flow;
pub mod geometry;
pub mod hyptimes;
pub mod linalg;
pub mod lpf;
pub mod pliss;
pub mod systems;

pub use error::{Error, Result};
