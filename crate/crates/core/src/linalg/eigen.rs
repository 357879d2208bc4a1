//! Symmetric generalized eigenproblems `A x = lambda M x`.
//!
//! [`generalized_eigh`] is the dense route: Cholesky reduction of `M` followed by
//! a symmetric eigensolver. [`lowest_eigenpairs`] targets the few smallest
//! pairs of large sparse pencils with shift-invert block subspace iteration and
//! Rayleigh-Ritz on the dense route.

use nalgebra::{DMatrix, SymmetricEigen};

use super::banded::BandedCholesky;
use super::dense::Cholesky;
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub lambda: f64,
    pub vector: Vec<f64>,
}

/// Eigen-decomposition of a dense symmetric matrix, eigenvalues ascending with
/// matching orthonormal columns.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// The `k` smallest eigenpairs of the pencil `(A, M)`, ascending, with
/// `M`-orthonormal vectors.
pub fn generalized_eigh(a: &DMatrix<f64>, m: &DMatrix<f64>, k: usize) -> Result<Vec<EigenPair>> {
    let n = a.nrows();
    if a.ncols() != n || m.nrows() != n || m.ncols() != n {
        return Err(Error::Dimension(
            "generalized_eigh needs square matrices of equal size".into(),
        ));
    }
    if k > n {
        return Err(Error::TooManyEigenpairs {
            requested: k,
            dimension: n,
        });
    }
    let chol = Cholesky::factor(m)?;
    // C = L^{-1} A L^{-T}
    let mut x = a.clone();
    for j in 0..n {
        chol.solve_lower_in_place(x.column_mut(j).as_mut_slice());
    }
    let mut c = x.transpose();
    for j in 0..n {
        chol.solve_lower_in_place(c.column_mut(j).as_mut_slice());
    }
    let c = (&c + c.transpose()) * 0.5;
    let (values, vectors) = symmetric_eigen(&c);
    Ok((0..k)
        .map(|j| {
            let mut y = vectors.column(j).iter().copied().collect::<Vec<_>>();
            chol.solve_upper_in_place(&mut y);
            EigenPair {
                lambda: values[j],
                vector: y,
            }
        })
        .collect())
}

/// As [`generalized_eigh`] for a semidefinite `M`, given a `shift` that makes
/// `A + shift M` positive definite. Directions in the kernel of `M` carry
/// infinite eigenvalues and are never returned.
pub fn generalized_eigh_shifted(a: &DMatrix<f64>, m: &DMatrix<f64>, k: usize, shift: f64) -> Result<Vec<EigenPair>> {
    let n = a.nrows();
    if a.ncols() != n || m.nrows() != n || m.ncols() != n {
        return Err(Error::Dimension(
            "generalized_eigh_shifted needs square matrices of equal size".into(),
        ));
    }
    let chol = Cholesky::factor(&(a + m * shift))?;
    // C = L^{-1} M L^{-T}, eigenvalues 1 / (lambda + shift)
    let mut x = m.clone();
    for j in 0..n {
        chol.solve_lower_in_place(x.column_mut(j).as_mut_slice());
    }
    let mut c = x.transpose();
    for j in 0..n {
        chol.solve_lower_in_place(c.column_mut(j).as_mut_slice());
    }
    let c = (&c + c.transpose()) * 0.5;
    let (values, vectors) = symmetric_eigen(&c);
    let finite = values.iter().filter(|&&mu| mu > f64::EPSILON * values[n - 1]).count();
    if k > finite {
        return Err(Error::TooManyEigenpairs {
            requested: k,
            dimension: finite,
        });
    }
    Ok((0..k)
        .map(|i| {
            let j = n - 1 - i;
            let mu = values[j];
            let mut y = vectors.column(j).iter().map(|v| v / mu.sqrt()).collect::<Vec<_>>();
            chol.solve_upper_in_place(&mut y);
            EigenPair {
                lambda: 1.0 / mu - shift,
                vector: y,
            }
        })
        .collect())
}

/// Shift for the pencil `(A, M)`: a small fraction of its trace ratio.
pub fn default_shift(a: &CsrMatrix, m: &CsrMatrix) -> f64 {
    let trace_a: f64 = a.diagonal().iter().sum();
    let trace_m: f64 = m.diagonal().iter().sum();
    1e-4 * trace_a / trace_m
}

/// Settings for [`lowest_eigenpairs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspaceOptions {
    /// Stop when `||A x - lambda M x|| <= tol ||A||_inf ||x||` for every wanted pair.
    pub tol: f64,
    pub max_iter: usize,
    /// Below this dimension the dense route is used directly.
    pub dense_cutoff: usize,
}

impl Default for SubspaceOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 2000,
            dense_cutoff: 48,
        }
    }
}

fn splitmix(state: &mut u64) -> f64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5
}

/// M-orthonormalizes the columns in place (classical Gram-Schmidt, two passes)
/// and returns `M` times each column. Columns that collapse are replaced by
/// fresh pseudo-random vectors.
fn m_orthonormalize(m: &CsrMatrix, cols: &mut [Vec<f64>], seed: &mut u64) -> Vec<Vec<f64>> {
    let n = m.nrows;
    let mut m_cols: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    for j in 0..cols.len() {
        let mut attempts = 0;
        loop {
            let v = &mut cols[j];
            let mut before = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for _pass in 0..2 {
                let (head, tail) = cols.split_at_mut(j);
                let v = &mut tail[0];
                for (u, mu) in head.iter().zip(&m_cols) {
                    let proj: f64 = mu.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                    for (x, y) in v.iter_mut().zip(u) {
                        *x -= proj * y;
                    }
                }
            }
            let v = &mut cols[j];
            let mut mv = m.matvec(v);
            let norm = mv.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt();
            let euclid = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if before == 0.0 {
                before = 1.0;
            }
            if norm > 0.0 && euclid > 1e-10 * before {
                v.iter_mut().for_each(|x| *x /= norm);
                mv.iter_mut().for_each(|x| *x /= norm);
                m_cols.push(mv);
                break;
            }
            attempts += 1;
            assert!(
                attempts < 8,
                "cannot extend an M-orthonormal block of size {j} in dimension {n}"
            );
            *v = (0..n).map(|_| splitmix(seed)).collect();
        }
    }
    m_cols
}

/// The `k` smallest eigenpairs of a sparse symmetric pencil with `A` positive
/// semidefinite and `M` positive definite.
pub fn lowest_eigenpairs(a: &CsrMatrix, m: &CsrMatrix, k: usize, opts: &SubspaceOptions) -> Result<Vec<EigenPair>> {
    lowest_eigenpairs_warm(a, m, k, opts, None).map(|(pairs, _)| pairs)
}

/// As [`lowest_eigenpairs`], optionally starting from a previous block (for a
/// nearby pencil). Also returns the final Ritz block for the next warm start.
pub fn lowest_eigenpairs_warm(
    a: &CsrMatrix,
    m: &CsrMatrix,
    k: usize,
    opts: &SubspaceOptions,
    start: Option<&[Vec<f64>]>,
) -> Result<(Vec<EigenPair>, Vec<Vec<f64>>)> {
    let n = a.nrows;
    if k > n {
        return Err(Error::TooManyEigenpairs {
            requested: k,
            dimension: n,
        });
    }
    let shift = default_shift(a, m);
    if n <= opts.dense_cutoff.max(k + 1) {
        return Ok((
            generalized_eigh_shifted(&a.to_dense(), &m.to_dense(), k, shift)?,
            Vec::new(),
        ));
    }
    let p = (2 * k + 6).min(n);
    let a_norm = a.norm_inf();

    let mut seed = 0x5EED_u64 ^ n as u64;
    let mut block: Vec<Vec<f64>> = start
        .unwrap_or(&[])
        .iter()
        .filter(|v| v.len() == n)
        .take(p)
        .cloned()
        .collect();
    // a full warm block is checked as is before any inverse step
    let mut skip_inverse = block.len() == p;
    while block.len() < p {
        block.push((0..n).map(|_| splitmix(&mut seed)).collect());
    }

    let rounds = opts.max_iter + usize::from(skip_inverse);
    let mut factor: Option<BandedCholesky> = None;
    let mut worst = f64::INFINITY;
    let mut ax = vec![0.0; n];
    for _ in 0..rounds {
        if !std::mem::take(&mut skip_inverse) {
            if factor.is_none() {
                factor = Some(BandedCholesky::factor(&a.add_scaled(shift, m))?);
            }
            let f = factor.as_ref().unwrap();
            for col in block.iter_mut() {
                let mut mx = m.matvec(col);
                f.solve_in_place(&mut mx);
                *col = mx;
            }
        }
        let m_cols = m_orthonormalize(m, &mut block, &mut seed);
        let a_cols: Vec<Vec<f64>> = block.iter().map(|c| a.matvec(c)).collect();
        let mut proj_a = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..=i {
                let v: f64 = block[i].iter().zip(&a_cols[j]).map(|(x, y)| x * y).sum();
                proj_a[(i, j)] = v;
                proj_a[(j, i)] = v;
            }
        }
        // block is M-orthonormal, so the projected pencil is standard
        let (values, vectors) = symmetric_eigen(&proj_a);

        let combine = |cols: &[Vec<f64>], j: usize| {
            let mut x = vec![0.0; n];
            for (i, col) in cols.iter().enumerate() {
                let c = vectors[(i, j)];
                for (xi, ci) in x.iter_mut().zip(col) {
                    *xi += c * ci;
                }
            }
            x
        };
        let ritz: Vec<Vec<f64>> = (0..p).map(|j| combine(&block, j)).collect();
        worst = 0.0;
        for j in 0..k {
            let x = &ritz[j];
            let mx = combine(&m_cols, j);
            a.matvec_into(x, &mut ax);
            let r = ax
                .iter()
                .zip(&mx)
                .map(|(u, v)| (u - values[j] * v).powi(2))
                .sum::<f64>()
                .sqrt();
            let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            worst = worst.max(r / (a_norm * xn));
        }
        block = ritz;
        if worst <= opts.tol {
            let pairs = block
                .iter()
                .take(k)
                .zip(&values)
                .map(|(v, &lambda)| EigenPair {
                    lambda,
                    vector: v.clone(),
                })
                .collect();
            return Ok((pairs, block));
        }
    }
    Err(Error::EigenNotConverged {
        iterations: opts.max_iter,
        residual: worst,
    })
}
