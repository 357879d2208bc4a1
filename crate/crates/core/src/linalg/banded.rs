//! Band Cholesky for the small local systems of a neighborhood.

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Factor of an SPD band matrix, stored row-wise over the lower band.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    // row i holds L[i, i - bw ..= i] at [i * (bw + 1)..(i + 1) * (bw + 1)]
    band: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows;
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for r in 0..n {
            let (cols, vals) = a.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                if c <= r {
                    band[r * w + (c + bw - r)] += v;
                }
            }
        }
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(bw));
                let mut s = band[i * w + (j + bw - i)];
                if lo < j {
                    let ri = &band[i * w + (lo + bw - i)..i * w + (j + bw - i)];
                    let rj = &band[j * w + (lo + bw - j)..j * w + bw];
                    s -= ri.iter().zip(rj).map(|(a, b)| a * b).sum::<f64>();
                }
                if j == i {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { column: i, pivot: s });
                    }
                    band[i * w + bw] = s.sqrt();
                } else {
                    band[i * w + (j + bw - i)] = s / band[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &self.band[i * w + (lo + bw - i)..i * w + bw];
            let acc: f64 = row.iter().zip(&x[lo..i]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - acc) / self.band[i * w + bw];
        }
        for i in (0..n).rev() {
            x[i] /= self.band[i * w + bw];
            let v = x[i];
            let lo = i.saturating_sub(bw);
            let row = &self.band[i * w + (lo + bw - i)..i * w + bw];
            for (xk, l) in x[lo..i].iter_mut().zip(row) {
                *xk -= l * v;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
