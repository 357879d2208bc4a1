//! Jacobi-preconditioned conjugate gradients.

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_CG_TOL: f64 = 1e-10;
pub const DEFAULT_CG_MAX_ITER: usize = 20_000;

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `||b - A x|| / ||b||` of the returned iterate.
    pub relative_residual: f64,
    pub converged: bool,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Runs PCG from `x0` until `||r|| <= tol ||b||`, calling `monitor` with every
/// iterate (including the start).
pub fn pcg_monitored(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
    mut monitor: impl FnMut(&[f64]),
) -> CgOutcome {
    let n = b.len();
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        monitor(&x);
        return CgOutcome {
            x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        };
    }
    let mut ax = vec![0.0; n];
    a.matvec_into(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let target = tol * b_norm;
    let mut res = dot(&r, &r).sqrt();
    monitor(&x);
    let mut it = 0;
    while res > target && it < max_iter {
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = dot(&r, &r).sqrt();
        it += 1;
        monitor(&x);
    }
    // recompute the true residual to guard against recurrence drift
    a.matvec_into(&x, &mut ax);
    let true_res = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai).powi(2)).sum::<f64>().sqrt();
    CgOutcome {
        x,
        iterations: it,
        relative_residual: true_res / b_norm,
        converged: true_res <= target * 10.0 && res <= target,
    }
}

/// Solves `A x = b` for SPD `A`, reporting failure with the achieved residual.
///
/// When the recursive residual reaches the target but the true one does not,
/// CG is restarted from the current iterate (a few times at most).
pub fn spd_solve(a: &CsrMatrix, b: &[f64], x0: Option<&[f64]>, tol: f64, max_iter: usize) -> Result<CgOutcome> {
    let mut out = pcg_monitored(a, b, x0, tol, max_iter, |_| {});
    let mut used = out.iterations;
    for _restart in 0..4 {
        if out.converged || used >= max_iter {
            break;
        }
        let next = pcg_monitored(a, b, Some(&out.x), tol, max_iter - used, |_| {});
        used += next.iterations;
        out = next;
    }
    out.iterations = used;
    if out.converged {
        Ok(out)
    } else {
        Err(Error::CgNotConverged {
            iterations: out.iterations,
            residual: out.relative_residual,
        })
    }
}
