//! Generalized multiscale spaces and the multiscale Picard driver.

mod driver;
#[cfg(test)]
pub(crate) mod fixture;
mod offline;
mod online;
mod pou;
mod space;

pub use driver::{
    gmsfem_picard, gmsfem_picard_observed, kappa_change_indicator, GmsfemOptions, GmsfemTrace, IterationRecord,
    SpaceKind, StageTimes, UpdatePolicy,
};
pub use offline::{local_pencil, offline_basis, EigenMethod, OfflineBasis, CLUSTER_GAP};
pub use online::{
    online_adaptive_solve, online_basis, online_basis_from_residual, online_candidates, online_enrich_step, select_kp,
    LocalSolvers, OnlineLog, OnlineRound, OnlineSettings,
};
pub use pou::{build_pou, PartitionOfUnity, PouMode};
pub use space::{assemble_space, coarse_solve, BasisKind, CoarseSolution, LocalBasis, MultiscaleSpace, RANK_TOLERANCE};
