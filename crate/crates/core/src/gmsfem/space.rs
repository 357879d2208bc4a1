//! Multiscale spaces: local basis functions, prolongation and coarse solves.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::SparseSpd;
use crate::linalg::Cholesky;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    Offline,
    Online,
    /// Unit vector of the fine space (full-space runs only).
    Fine,
}

/// A basis function attached to one coarse node, as a sparse vector over the
/// global free dofs.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBasis {
    pub coarse_node: usize,
    pub kind: BasisKind,
    /// Strictly increasing global free indices.
    pub support: Vec<usize>,
    pub values: Vec<f64>,
    pub eigenvalue: Option<f64>,
    /// Energy norm at creation (online functions).
    pub energy_norm: Option<f64>,
}

impl LocalBasis {
    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        for (&i, &x) in self.support.iter().zip(&self.values) {
            v[i] = x;
        }
        v
    }

    /// `p^T A p`.
    pub fn energy_sq(&self, a: &SparseSpd) -> f64 {
        sparse_energy(a, &self.support, &self.values)
    }
}

fn sparse_energy(a: &SparseSpd, support: &[usize], values: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&r, &x) in support.iter().zip(values) {
        let (cols, vals) = a.row(r);
        let acc: f64 = cols
            .iter()
            .zip(vals)
            .filter_map(|(c, v)| support.binary_search(c).ok().map(|q| v * values[q]))
            .sum();
        total += x * acc;
    }
    total
}

/// Span of a list of [`LocalBasis`] with its prolongation `P`.
///
/// Columns of `P` are the bases scaled to unit energy in the operator the
/// space was assembled with.
#[derive(Debug, Clone)]
pub struct MultiscaleSpace {
    bases: Vec<LocalBasis>,
    /// Offline functions per interior coarse node.
    pub offline_counts: Vec<usize>,
    /// Increments on every rebuild of the offline space.
    pub generation: usize,
    num_free: usize,
    scale: Vec<f64>,
    row_ptr: Vec<usize>,
    row_cols: Vec<usize>,
    row_vals: Vec<f64>,
    /// Smallest eigenvalue of the unit-diagonal Gram matrix at assembly.
    pub gram_min_eigenvalue: f64,
}

/// Threshold on the normalized Gram matrix below which columns count as dependent.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Stacks the bases as columns of `P`, normalizes them in the `a` energy and
/// checks linear independence.
pub fn assemble_space(
    bases: Vec<LocalBasis>,
    a: &SparseSpd,
    offline_counts: Vec<usize>,
    generation: usize,
) -> Result<MultiscaleSpace> {
    if bases.is_empty() {
        return Err(Error::EmptySpace);
    }
    let n = a.nrows;
    let mut scale = Vec::with_capacity(bases.len());
    for b in &bases {
        if let Some(&last) = b.support.last() {
            if last >= n {
                return Err(Error::Dimension(format!("basis index {last} outside {n} free dofs")));
            }
        }
        let e = b.energy_sq(a);
        if e.is_nan() || e <= 0.0 {
            return Err(Error::RankDeficient {
                min_eigenvalue: 0.0,
                nodes: vec![b.coarse_node],
            });
        }
        scale.push(1.0 / e.sqrt());
    }
    let mut counts = vec![0usize; n + 1];
    for b in &bases {
        for &i in &b.support {
            counts[i + 1] += 1;
        }
    }
    for i in 0..n {
        counts[i + 1] += counts[i];
    }
    let row_ptr = counts.clone();
    let mut next = counts;
    let nnz = row_ptr[n];
    let mut row_cols = vec![0; nnz];
    let mut row_vals = vec![0.0; nnz];
    for (j, b) in bases.iter().enumerate() {
        for (&i, &v) in b.support.iter().zip(&b.values) {
            row_cols[next[i]] = j;
            row_vals[next[i]] = v * scale[j];
            next[i] += 1;
        }
    }
    let mut space = MultiscaleSpace {
        bases,
        offline_counts,
        generation,
        num_free: n,
        scale,
        row_ptr,
        row_cols,
        row_vals,
        gram_min_eigenvalue: f64::NAN,
    };
    let gram = space.galerkin_matrix(a);
    let min = match Cholesky::factor(&gram) {
        Ok(ch) => {
            let (lambda, v) = ch.min_eigenvalue(60);
            if lambda < RANK_TOLERANCE {
                return Err(Error::RankDeficient {
                    min_eigenvalue: lambda,
                    nodes: space.dominant_nodes(&v),
                });
            }
            lambda
        }
        Err(Error::NotPositiveDefinite { column, pivot }) => {
            return Err(Error::RankDeficient {
                min_eigenvalue: pivot.min(0.0),
                nodes: vec![space.bases[column].coarse_node],
            })
        }
        Err(e) => return Err(e),
    };
    space.gram_min_eigenvalue = min;
    Ok(space)
}

impl MultiscaleSpace {
    /// Every unit vector of the fine free space.
    pub fn full(a: &SparseSpd, generation: usize) -> Result<Self> {
        let bases = (0..a.nrows)
            .map(|i| LocalBasis {
                coarse_node: i,
                kind: BasisKind::Fine,
                support: vec![i],
                values: vec![1.0],
                eigenvalue: None,
                energy_norm: None,
            })
            .collect();
        assemble_space(bases, a, Vec::new(), generation)
    }

    pub fn dim(&self) -> usize {
        self.bases.len()
    }

    pub fn num_free(&self) -> usize {
        self.num_free
    }

    pub fn bases(&self) -> &[LocalBasis] {
        &self.bases
    }

    pub fn into_bases(self) -> Vec<LocalBasis> {
        self.bases
    }

    pub fn count(&self, kind: BasisKind) -> usize {
        self.bases.iter().filter(|b| b.kind == kind).count()
    }

    /// Normalized column `j` of `P` as a dense fine vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        let mut v = self.bases[j].to_dense(self.num_free);
        v.iter_mut().for_each(|x| *x *= self.scale[j]);
        v
    }

    /// `P c`.
    pub fn prolong(&self, c: &[f64]) -> Vec<f64> {
        (0..self.num_free)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .map(|k| self.row_vals[k] * c[self.row_cols[k]])
                    .sum()
            })
            .collect()
    }

    /// `P^T v`.
    pub fn restrict(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (r, &x) in v.iter().enumerate() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[self.row_cols[k]] += self.row_vals[k] * x;
            }
        }
        out
    }

    /// `P^T A P`, dense.
    pub fn galerkin_matrix(&self, a: &SparseSpd) -> DMatrix<f64> {
        let m = self.dim();
        let n = self.num_free;
        let mut g = DMatrix::<f64>::zeros(m, m);
        let mut w = vec![0.0; n];
        let mut mark = vec![false; n];
        let mut touched = Vec::new();
        for (j, b) in self.bases.iter().enumerate() {
            let s = self.scale[j];
            for (&r, &x) in b.support.iter().zip(&b.values) {
                let (cols, vals) = a.row(r);
                for (&c, &v) in cols.iter().zip(vals) {
                    if !mark[c] {
                        mark[c] = true;
                        touched.push(c);
                    }
                    w[c] += v * x * s;
                }
            }
            for &r in &touched {
                let wr = w[r];
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    let i = self.row_cols[k];
                    if i <= j {
                        g[(i, j)] += self.row_vals[k] * wr;
                    }
                }
                w[r] = 0.0;
                mark[r] = false;
            }
            touched.clear();
        }
        for j in 0..m {
            for i in 0..j {
                g[(j, i)] = g[(i, j)];
            }
        }
        g
    }

    /// Coarse nodes owning the largest entries of a coefficient vector.
    fn dominant_nodes(&self, v: &[f64]) -> Vec<usize> {
        let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut nodes: Vec<usize> = v
            .iter()
            .enumerate()
            .filter(|(_, x)| x.abs() >= 0.1 * peak)
            .map(|(j, _)| self.bases[j].coarse_node)
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    /// New space with `extra` appended; existing columns keep their order.
    pub fn extend(&self, extra: Vec<LocalBasis>, a: &SparseSpd) -> Result<MultiscaleSpace> {
        let mut bases = self.bases.clone();
        bases.extend(extra);
        assemble_space(bases, a, self.offline_counts.clone(), self.generation)
    }
}

/// Galerkin solution in a multiscale space.
#[derive(Debug, Clone)]
pub struct CoarseSolution {
    /// Coefficients with respect to the normalized columns.
    pub coefficients: Vec<f64>,
    /// `P c` on the fine free dofs.
    pub u: Vec<f64>,
}

/// Solves `(P^T A P) c = P^T b` and prolongs.
pub fn coarse_solve(space: &MultiscaleSpace, a: &SparseSpd, b: &[f64]) -> Result<CoarseSolution> {
    if space.dim() == 0 {
        return Err(Error::EmptySpace);
    }
    let g = space.galerkin_matrix(a);
    let rhs = space.restrict(b);
    let coefficients = Cholesky::factor(&g)?.solve(&rhs);
    let u = space.prolong(&coefficients);
    Ok(CoarseSolution { coefficients, u })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmsfem::fixture::{setup, sub};
    use crate::linalg::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn offline_space_has_expected_shape() {
        let s = setup();
        let space = s.offline_space(3);
        assert_eq!(space.dim(), 3 * s.grid.interior_coarse_nodes.len());
        assert_eq!(space.count(BasisKind::Offline), space.dim());
        assert_eq!(space.offline_counts, vec![3; s.nbs.len()]);
        assert!(space.gram_min_eigenvalue > RANK_TOLERANCE);
        let g = space.galerkin_matrix(&s.a);
        assert!((0..space.dim()).all(|j| (g[(j, j)] - 1.0).abs() < 1e-12));
        assert!((&g - g.transpose()).amax() == 0.0);
    }

    #[test]
    fn prolong_and_restrict_are_adjoint() {
        let s = setup();
        let space = s.offline_space(2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c: Vec<f64> = (0..space.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..space.num_free()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs = dot(&space.prolong(&c), &v);
        let rhs = dot(&c, &space.restrict(&v));
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
        let col = space.column(3);
        let mut e = vec![0.0; space.dim()];
        e[3] = 1.0;
        assert_eq!(space.prolong(&e), col);
    }

    #[test]
    fn dependent_columns_are_rejected() {
        let s = setup();
        let space = s.offline_space(2);
        let mut bases = space.bases().to_vec();
        let mut twin = bases[5].clone();
        twin.values.iter_mut().for_each(|v| *v *= -3.0);
        bases.push(twin);
        match assemble_space(bases, &s.a, vec![], 0) {
            Err(Error::RankDeficient { nodes, .. }) => assert!(nodes.contains(&space.bases()[5].coarse_node)),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
        let mut zero = space.bases()[0].clone();
        zero.values.iter_mut().for_each(|v| *v = 0.0);
        assert!(matches!(
            assemble_space(vec![zero], &s.a, vec![], 0),
            Err(Error::RankDeficient { .. })
        ));
        assert!(matches!(
            assemble_space(vec![], &s.a, vec![], 0),
            Err(Error::EmptySpace)
        ));
    }

    #[test]
    fn galerkin_orthogonality_and_pythagoras() {
        let s = setup();
        let uh = s.fine_solution();
        let norm_sq = s.energy_sq(&uh);
        for count in [1, 3, 5] {
            let space = s.offline_space(count);
            let ums = coarse_solve(&space, &s.a, &s.b).unwrap().u;
            let e = sub(&uh, &ums);
            let ae = s.a.matvec(&e);
            for j in 0..space.dim() {
                // columns have unit energy
                assert!(dot(&ae, &space.column(j)).abs() <= 1e-8 * norm_sq.sqrt());
            }
            let gap = norm_sq - s.energy_sq(&ums) - s.energy_sq(&e);
            assert!(gap.abs() <= 1e-8 * norm_sq, "{gap}");
        }
    }

    #[test]
    fn coarse_solution_minimizes_the_energy_error() {
        let s = setup();
        let uh = s.fine_solution();
        let space = s.offline_space(3);
        let sol = coarse_solve(&space, &s.a, &s.b).unwrap();
        let best = s.energy_sq(&sub(&uh, &sol.u));
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let c: Vec<f64> = sol
                .coefficients
                .iter()
                .map(|x| x + 0.05 * rng.random_range(-1.0..1.0))
                .collect();
            assert!(s.energy_sq(&sub(&uh, &space.prolong(&c))) >= best);
        }
    }

    #[test]
    fn full_space_reproduces_the_fine_solve() {
        let s = setup();
        let uh = s.fine_solution();
        let space = MultiscaleSpace::full(&s.a, 4).unwrap();
        assert_eq!(space.dim(), s.dofs.num_free());
        assert_eq!(space.generation, 4);
        let u = coarse_solve(&space, &s.a, &s.b).unwrap().u;
        let e = sub(&u, &uh);
        assert!(s.energy_sq(&e) <= 1e-20 * s.energy_sq(&uh));
    }

    #[test]
    fn extend_appends_in_order() {
        let s = setup();
        let one = s.offline_space(1);
        let three = s.offline_space(3);
        let extra: Vec<LocalBasis> = three.bases().iter().skip(1).step_by(3).cloned().collect();
        let grown = one.extend(extra.clone(), &s.a).unwrap();
        assert_eq!(grown.dim(), one.dim() + extra.len());
        assert_eq!(&grown.bases()[..one.dim()], one.bases());
        assert_eq!(&grown.bases()[one.dim()..], &extra[..]);
        assert_eq!(grown.offline_counts, one.offline_counts);
    }
}
