//! Strain-limiting nonlinear elasticity on the unit square: Picard linearization
//! with a fine P1 reference solver and a generalized multiscale solver with
//! offline spectral and residual-driven online bases.

pub mod coefficient;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod fine_solver;
pub mod gmsfem;
pub mod grid;
pub mod linalg;
pub mod reporting;

pub use error::{Error, Result};
