//! Dense Cholesky factorization on column-major storage.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower-triangular factor `L` of `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    /// Factors a symmetric matrix; only the lower triangle is read.
    pub fn factor(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("cholesky of {}x{} matrix", n, a.ncols())));
        }
        let mut l = a.clone();
        {
            let s = l.as_mut_slice();
            let mut col = vec![0.0; n];
            for j in 0..n {
                col[j..].copy_from_slice(&s[j * n + j..j * n + n]);
                for k in 0..j {
                    let ljk = s[k * n + j];
                    if ljk != 0.0 {
                        let src = &s[k * n + j..k * n + n];
                        for (c, &v) in col[j..].iter_mut().zip(src) {
                            *c -= ljk * v;
                        }
                    }
                }
                let d = col[j];
                if d <= 0.0 || !d.is_finite() {
                    return Err(Error::NotPositiveDefinite { column: j, pivot: d });
                }
                let ljj = d.sqrt();
                s[j * n + j] = ljj;
                for i in j + 1..n {
                    s[j * n + i] = col[i] / ljj;
                }
                for i in 0..j {
                    s[j * n + i] = 0.0;
                }
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Diagonal of `L`.
    pub fn pivots(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.l[(i, i)]).collect()
    }

    /// Overwrites `x` with `L^{-1} x`.
    pub fn solve_lower_in_place(&self, x: &mut [f64]) {
        let n = self.dim();
        let s = self.l.as_slice();
        for j in 0..n {
            let v = x[j] / s[j * n + j];
            x[j] = v;
            if v != 0.0 {
                for i in j + 1..n {
                    x[i] -= s[j * n + i] * v;
                }
            }
        }
    }

    /// Overwrites `x` with `L^{-T} x`.
    pub fn solve_upper_in_place(&self, x: &mut [f64]) {
        let n = self.dim();
        let s = self.l.as_slice();
        for j in (0..n).rev() {
            let col = &s[j * n + j + 1..j * n + n];
            let acc: f64 = col.iter().zip(&x[j + 1..]).map(|(a, b)| a * b).sum();
            x[j] = (x[j] - acc) / s[j * n + j];
        }
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        self.solve_lower_in_place(x);
        self.solve_upper_in_place(x);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Estimates the smallest eigenvalue of `A` by inverse iteration, returning
    /// it with the converged eigenvector.
    pub fn min_eigenvalue(&self, iterations: usize) -> (f64, Vec<f64>) {
        let n = self.dim();
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7).sin()).collect();
        let mut lambda = f64::INFINITY;
        for _ in 0..iterations.max(1) {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            let mut w = v.clone();
            self.solve_in_place(&mut w);
            // Rayleigh quotient of A at w: (w^T A w)/(w^T w) with A w = v
            let wv: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
            let ww: f64 = w.iter().map(|x| x * x).sum();
            let next = wv / ww;
            v = w;
            if (lambda - next).abs() <= 1e-12 * next.abs() {
                lambda = next;
                break;
            }
            lambda = next;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        (lambda, v)
    }
}

/// `x^T A y` for dense `A`.
pub fn dense_bilinear(a: &DMatrix<f64>, x: &[f64], y: &[f64]) -> f64 {
    let yv = DVector::from_column_slice(y);
    let ay = a * yv;
    x.iter().zip(ay.iter()).map(|(p, q)| p * q).sum()
}
