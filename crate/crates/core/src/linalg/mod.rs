//! Sparse SPD solves and symmetric eigenproblems.

mod banded;
mod cg;
mod dense;
mod eigen;
mod sparse;

pub use banded::BandedCholesky;
pub use cg::{pcg_monitored, spd_solve, CgOutcome, DEFAULT_CG_MAX_ITER, DEFAULT_CG_TOL};
pub use dense::{dense_bilinear, Cholesky};
pub use eigen::{
    default_shift, generalized_eigh, generalized_eigh_shifted, lowest_eigenpairs, lowest_eigenpairs_warm,
    symmetric_eigen, EigenPair, SubspaceOptions,
};
pub use sparse::CsrMatrix;

/// Below this many unknowns a dense factorization may replace CG.
pub const DENSE_FALLBACK_LIMIT: usize = 3000;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
