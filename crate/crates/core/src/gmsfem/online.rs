//! Residual-driven online basis functions and adaptive enrichment.

use rayon::prelude::*;

use crate::coefficient::DisplacementField;
use crate::error::Result;
use crate::fem::{local_residual, local_stiffness, SourceSpec, SparseSpd};
use crate::grid::{FineMesh, Neighborhood};
use crate::linalg::{dot, BandedCholesky};

use super::space::{coarse_solve, BasisKind, LocalBasis, MultiscaleSpace};

/// Factored local stiffness on the zero-trace space `V_i` of every
/// neighborhood, for one fixed coefficient.
#[derive(Debug, Clone)]
pub struct LocalSolvers {
    factors: Vec<BandedCholesky>,
}

impl LocalSolvers {
    pub fn new(mesh: &FineMesh, nbs: &[Neighborhood], kappa: &[f64]) -> Result<Self> {
        let factors = nbs
            .par_iter()
            .map(|nb| BandedCholesky::factor(&local_stiffness(mesh, nb, kappa).principal_submatrix(&nb.interior_dofs)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { factors })
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }
}

/// Riesz representative `phi_i` of the local residual in `V_i`, with
/// `r_i = sqrt(a(phi_i, phi_i))` stored as its energy norm.
///
/// `rhs` holds the residual functional on the interior dofs of `nb`.
pub fn online_basis_from_residual(factor: &BandedCholesky, nb: &Neighborhood, rhs: &[f64]) -> LocalBasis {
    let phi = factor.solve(rhs);
    let r = dot(&phi, rhs).max(0.0).sqrt();
    let mut support = Vec::with_capacity(phi.len());
    let mut values = Vec::with_capacity(phi.len());
    for (&p, &v) in nb.interior_dofs.iter().zip(&phi) {
        if v != 0.0 {
            support.push(nb.local_to_global[p]);
            values.push(v);
        }
    }
    LocalBasis {
        coarse_node: nb.coarse_node,
        kind: BasisKind::Online,
        support,
        values,
        eigenvalue: None,
        energy_norm: Some(r),
    }
}

/// Online basis of one neighborhood straight from the local residual of `u_ms`.
pub fn online_basis(
    mesh: &FineMesh,
    nb: &Neighborhood,
    kappa: &[f64],
    u_ms: &DisplacementField,
    f: &SourceSpec,
) -> Result<LocalBasis> {
    let full = local_residual(mesh, nb, kappa, u_ms, f);
    let rhs: Vec<f64> = nb.interior_dofs.iter().map(|&p| full[p]).collect();
    let factor = BandedCholesky::factor(&local_stiffness(mesh, nb, kappa).principal_submatrix(&nb.interior_dofs))?;
    Ok(online_basis_from_residual(&factor, nb, &rhs))
}

/// Candidates of every neighborhood for the global residual `b - A u`.
pub fn online_candidates(solvers: &LocalSolvers, nbs: &[Neighborhood], residual: &[f64]) -> Vec<LocalBasis> {
    nbs.par_iter()
        .zip(solvers.factors.par_iter())
        .map(|(nb, factor)| {
            let rhs: Vec<f64> = nb
                .interior_dofs
                .iter()
                .map(|&p| residual[nb.local_to_global[p]])
                .collect();
            online_basis_from_residual(factor, nb, &rhs)
        })
        .collect()
}

/// Orders candidates by descending `r` (ascending coarse node on ties) and
/// returns the smallest `k` with `theta * sum r^2 <= sum_{j <= k} r_j^2`.
pub fn select_kp(r: &[f64], nodes: &[usize], theta: f64) -> (Vec<usize>, usize) {
    let mut order: Vec<usize> = (0..r.len()).collect();
    order.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(nodes[a].cmp(&nodes[b])));
    let total: f64 = r.iter().map(|x| x * x).sum();
    let target = theta * total;
    let mut acc = 0.0;
    let mut k = 0;
    for &i in &order {
        if k > 0 && acc >= target {
            break;
        }
        acc += r[i] * r[i];
        k += 1;
    }
    // exact arithmetic would stop at the full sum; rounding may not
    (order, k.min(r.len()))
}

/// Appends the `k_p` candidates picked by `theta`, at most `room` of them.
/// Returns the new space, the number added and `sum r_i^2`.
pub fn online_enrich_step(
    space: &MultiscaleSpace,
    a: &SparseSpd,
    candidates: Vec<LocalBasis>,
    theta: f64,
    room: usize,
) -> Result<(MultiscaleSpace, usize, f64)> {
    let r: Vec<f64> = candidates.iter().map(|c| c.energy_norm.unwrap_or(0.0)).collect();
    let nodes: Vec<usize> = candidates.iter().map(|c| c.coarse_node).collect();
    let sum_sq: f64 = r.iter().map(|x| x * x).sum();
    let (order, kp) = select_kp(&r, &nodes, theta);
    let mut slots: Vec<Option<LocalBasis>> = candidates.into_iter().map(Some).collect();
    let picked: Vec<LocalBasis> = order
        .into_iter()
        .take(kp.min(room))
        .filter(|&i| r[i] > 0.0)
        .filter_map(|i| slots[i].take())
        .collect();
    let added = picked.len();
    if added == 0 {
        return Ok((space.clone(), 0, sum_sq));
    }
    Ok((space.extend(picked, a)?, added, sum_sq))
}

/// Online settings of an adaptive solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineSettings {
    pub theta: f64,
    /// Stop once `sum r_i^2` is at most this.
    pub tol: f64,
    /// Maximum enrichment rounds.
    pub max_rounds: usize,
    /// Upper bound on the space dimension.
    pub max_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineRound {
    pub sum_r2: f64,
    pub added: usize,
    pub dimension: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OnlineLog {
    pub rounds: Vec<OnlineRound>,
    /// `sum r_i^2` of the returned solution, if it was evaluated.
    pub final_sum_r2: Option<f64>,
}

impl OnlineLog {
    pub fn bases_added(&self) -> usize {
        self.rounds.iter().map(|r| r.added).sum()
    }
}

/// Adaptive loop: coarse solve, residual candidates, stop test, enrichment.
pub fn online_adaptive_solve(
    space0: MultiscaleSpace,
    a: &SparseSpd,
    b: &[f64],
    nbs: &[Neighborhood],
    solvers: &LocalSolvers,
    settings: &OnlineSettings,
) -> Result<(Vec<f64>, MultiscaleSpace, OnlineLog)> {
    let mut space = space0;
    let mut log = OnlineLog::default();
    loop {
        let sol = coarse_solve(&space, a, b)?;
        if settings.tol.is_infinite() {
            return Ok((sol.u, space, log));
        }
        let au = a.matvec(&sol.u);
        let residual: Vec<f64> = b.iter().zip(&au).map(|(x, y)| x - y).collect();
        let candidates = online_candidates(solvers, nbs, &residual);
        let sum_r2: f64 = candidates.iter().map(|c| c.energy_norm.unwrap_or(0.0).powi(2)).sum();
        log.final_sum_r2 = Some(sum_r2);
        let room = settings.max_dim.saturating_sub(space.dim());
        if sum_r2 <= settings.tol || log.rounds.len() >= settings.max_rounds || room == 0 {
            return Ok((sol.u, space, log));
        }
        let (next, added, _) = online_enrich_step(&space, a, candidates, settings.theta, room)?;
        log.rounds.push(OnlineRound {
            sum_r2,
            added,
            dimension: next.dim(),
        });
        if added == 0 {
            return Ok((sol.u, next, log));
        }
        space = next;
    }
}
