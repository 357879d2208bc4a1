use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("coarse grid {coarse_nx}x{coarse_ny} does not nest in fine mesh {nx}x{ny}")]
    NonNesting {
        nx: usize,
        ny: usize,
        coarse_nx: usize,
        coarse_ny: usize,
    },

    #[error("coarse node {0} is not an interior coarse node")]
    BoundaryCoarseNode(usize),

    #[error("strain {strain} lies outside the admissible set (beta*|xi| = {product} >= 1)")]
    InadmissibleStrain { strain: f64, product: f64 },

    #[error("invalid coefficient field: {0}")]
    InvalidCoefficient(String),

    #[error("raster {path}: {message}")]
    Raster { path: PathBuf, message: String },

    #[error("matrix is not positive definite (pivot {pivot:e} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },

    #[error("conjugate gradients stalled after {iterations} iterations (relative residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("eigensolver did not converge after {iterations} iterations (worst residual {residual:e})")]
    EigenNotConverged { iterations: usize, residual: f64 },

    #[error("requested {requested} eigenpairs of a problem of dimension {dimension}")]
    TooManyEigenpairs { requested: usize, dimension: usize },

    #[error("multiscale space is rank deficient (smallest Gram eigenvalue {min_eigenvalue:e}); offending coarse nodes {nodes:?}")]
    RankDeficient { min_eigenvalue: f64, nodes: Vec<usize> },

    #[error("empty multiscale space")]
    EmptySpace,

    #[error("zero reference norm in {0}")]
    ZeroReference(&'static str),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("unknown field `{0}`")]
    UnknownField(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
