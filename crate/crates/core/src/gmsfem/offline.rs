//! Offline spectral basis functions on one neighborhood.

use crate::error::{Error, Result};
use crate::fem::{assemble_weighted_mass, local_stiffness};
use crate::grid::{FineMesh, Neighborhood, NONE};
use crate::linalg::{
    default_shift, generalized_eigh_shifted, lowest_eigenpairs_warm, CsrMatrix, EigenPair, SubspaceOptions,
};

use super::pou::PartitionOfUnity;
use super::space::{BasisKind, LocalBasis};

/// Local eigensolver choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EigenMethod {
    /// Dense shift-invert solve of the whole local pencil.
    Dense,
    /// Shift-invert subspace iteration on the sparse pencil.
    Subspace(SubspaceOptions),
}

impl Default for EigenMethod {
    fn default() -> Self {
        EigenMethod::Subspace(SubspaceOptions::default())
    }
}

/// Eigenvalues closer than this (relative) are treated as one cluster.
pub const CLUSTER_GAP: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct OfflineBasis {
    pub bases: Vec<LocalBasis>,
    /// `lambda_1 ..= lambda_{count + 1}`.
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors before the partition of unity factor, over the local dofs of `nb`.
    pub eigenvectors: Vec<Vec<f64>>,
    /// Final subspace block, a warm start for a nearby coefficient.
    pub block: Vec<Vec<f64>>,
}

/// Local spectral problem of `omega_i`: `A_i phi = lambda M_i phi` with the
/// stiffness and the `kappa * weight`-mass over the local free dofs.
pub fn local_pencil(mesh: &FineMesh, nb: &Neighborhood, kappa: &[f64], weight: &[f64]) -> (CsrMatrix, CsrMatrix) {
    (
        local_stiffness(mesh, nb, kappa),
        assemble_weighted_mass(mesh, nb, kappa, weight),
    )
}

/// The `count` lowest eigenvectors times `chi_i`.
///
/// Clusters of numerically equal eigenvalues have no preferred basis, so they
/// are rotated onto a fixed sequence of probes: the local load `probe`, then
/// the two translations and the rotation about the coarse node.
///
/// `nb` is normally a [`Neighborhood::snapshot`], so the local problem carries
/// no boundary condition; dofs without a global index are dropped from the
/// basis functions. `warm` seeds the subspace iteration with the block of an
/// earlier solve.
#[allow(clippy::too_many_arguments)]
pub fn offline_basis(
    mesh: &FineMesh,
    nb: &Neighborhood,
    kappa: &[f64],
    pou: &PartitionOfUnity,
    weight: &[f64],
    probe: &[f64],
    count: usize,
    method: EigenMethod,
    warm: Option<&[Vec<f64>]>,
) -> Result<OfflineBasis> {
    let (a, m) = local_pencil(mesh, nb, kappa, weight);
    let n = nb.num_free();
    if count + 1 > n {
        return Err(Error::TooManyEigenpairs {
            requested: count + 1,
            dimension: n,
        });
    }
    let want = (count + 2).min(n);
    let (mut pairs, block) = match method {
        EigenMethod::Dense => (
            generalized_eigh_shifted(&a.to_dense(), &m.to_dense(), want, default_shift(&a, &m))?,
            Vec::new(),
        ),
        EigenMethod::Subspace(opts) => lowest_eigenpairs_warm(&a, &m, want, &opts, warm)?,
    };
    let trace_ratio = a.diagonal().iter().sum::<f64>() / m.diagonal().iter().sum::<f64>();
    canonicalize(mesh, nb, &m, trace_ratio, probe, &mut pairs);

    let node = nb.coarse_node;
    let bases = pairs[..count]
        .iter()
        .map(|pair| {
            let mut support = Vec::new();
            let mut values = Vec::new();
            for (p, &phi) in pair.vector.iter().enumerate() {
                let (i, j) = mesh.node_ij(nb.free_dofs[p] / 2);
                let v = pou.value(node, i, j) * phi;
                if v != 0.0 && nb.local_to_global[p] != NONE {
                    support.push(nb.local_to_global[p]);
                    values.push(v);
                }
            }
            LocalBasis {
                coarse_node: node,
                kind: BasisKind::Offline,
                support,
                values,
                eigenvalue: Some(pair.lambda),
                energy_norm: None,
            }
        })
        .collect();
    Ok(OfflineBasis {
        bases,
        eigenvalues: pairs[..count + 1].iter().map(|p| p.lambda).collect(),
        eigenvectors: pairs.into_iter().take(count).map(|p| p.vector).collect(),
        block,
    })
}

fn canonicalize(
    mesh: &FineMesh,
    nb: &Neighborhood,
    m: &CsrMatrix,
    trace_ratio: f64,
    probe: &[f64],
    pairs: &mut [EigenPair],
) {
    // spectral scale of the pencil, so that a cluster at zero is still detected
    let scale = pairs
        .iter()
        .fold(trace_ratio, |s, p| s.max(p.lambda.abs()))
        .max(f64::MIN_POSITIVE);
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start + 1;
        while end < pairs.len() && pairs[end].lambda - pairs[end - 1].lambda <= CLUSTER_GAP * scale {
            end += 1;
        }
        if end - start > 1 {
            rotate_cluster(mesh, nb, m, probe, &mut pairs[start..end]);
        } else {
            fix_sign(&mut pairs[start].vector);
        }
        start = end;
    }
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() * (1.0 + 1e-12) {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn rotate_cluster(mesh: &FineMesh, nb: &Neighborhood, m: &CsrMatrix, probe: &[f64], cluster: &mut [EigenPair]) {
    let g = cluster.len();
    let n = nb.num_free();
    let center = mesh.nodes[mesh.node_index(nb.node_box.i0, nb.node_box.j0)];
    let center = [
        0.5 * (center[0] + mesh.nodes[mesh.node_index(nb.node_box.i1, nb.node_box.j1)][0]),
        0.5 * (center[1] + mesh.nodes[mesh.node_index(nb.node_box.i1, nb.node_box.j1)][1]),
    ];
    let mode = |f: &dyn Fn([f64; 2]) -> [f64; 2]| -> Vec<f64> {
        (0..n)
            .map(|p| {
                let d = nb.free_dofs[p];
                f(mesh.nodes[d / 2])[d % 2]
            })
            .collect()
    };
    // probe coefficients in cluster coordinates; the load acts as a functional,
    // the rigid modes as functions
    let mut targets: Vec<Vec<f64>> = vec![cluster.iter().map(|c| dot(&c.vector, probe)).collect()];
    for f in [
        &(|_| [1.0, 0.0]) as &dyn Fn([f64; 2]) -> [f64; 2],
        &|_| [0.0, 1.0],
        &|p: [f64; 2]| [-(p[1] - center[1]), p[0] - center[0]],
    ] {
        let mp = m.matvec(&mode(f));
        targets.push(cluster.iter().map(|c| dot(&c.vector, &mp)).collect());
    }
    for k in 0..g {
        let mut e = vec![0.0; g];
        e[k] = 1.0;
        targets.push(e);
    }
    let mut chosen: Vec<Vec<f64>> = Vec::with_capacity(g);
    for mut t in targets {
        if chosen.len() == g {
            break;
        }
        let norm0 = dot(&t, &t).sqrt();
        if norm0 == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for c in &chosen {
                let s = dot(&t, c);
                t.iter_mut().zip(c).for_each(|(x, y)| *x -= s * y);
            }
        }
        let norm = dot(&t, &t).sqrt();
        if norm > 1e-6 * norm0 {
            t.iter_mut().for_each(|x| *x /= norm);
            chosen.push(t);
        }
    }
    let old: Vec<Vec<f64>> = cluster.iter().map(|c| c.vector.clone()).collect();
    for (pair, coef) in cluster.iter_mut().zip(&chosen) {
        pair.vector.iter_mut().for_each(|x| *x = 0.0);
        for (c, v) in coef.iter().zip(&old) {
            pair.vector.iter_mut().zip(v).for_each(|(x, y)| *x += c * y);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
