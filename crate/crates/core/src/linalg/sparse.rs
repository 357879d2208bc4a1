use nalgebra::DMatrix;

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: Vec<(usize, usize, f64)>) -> Self {
        // bucket by row, then sort the (short) rows by column
        let mut start = vec![0usize; nrows + 1];
        for &(r, c, _) in &triplets {
            debug_assert!(r < nrows && c < ncols);
            start[r + 1] += 1;
        }
        for r in 0..nrows {
            start[r + 1] += start[r];
        }
        let mut next = start.clone();
        let mut cols = vec![(0usize, 0.0f64); triplets.len()];
        for (r, c, v) in triplets {
            cols[next[r]] = (c, v);
            next[r] += 1;
        }
        let mut indptr = vec![0; nrows + 1];
        let mut indices = Vec::with_capacity(cols.len());
        let mut values: Vec<f64> = Vec::with_capacity(cols.len());
        for r in 0..nrows {
            let row = &mut cols[start[r]..start[r + 1]];
            row.sort_by_key(|&(c, _)| c);
            let mut last = usize::MAX;
            for &(c, v) in row.iter() {
                if c == last {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = c;
                }
            }
            indptr[r + 1] = indices.len();
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for r in 0..a.nrows() {
            for c in 0..a.ncols() {
                if a[(r, c)] != 0.0 {
                    t.push((r, c, a[(r, c)]));
                }
            }
        }
        Self::from_triplets(a.nrows(), a.ncols(), t)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate().take(self.nrows) {
            let (cols, vals) = self.row(r);
            *out = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.nrows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                x[r] * cols.iter().zip(vals).map(|(&c, &v)| v * y[c]).sum::<f64>()
            })
            .sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|r| self.get(r, r)).collect()
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|r| self.row(r).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Principal submatrix on `keep`, which must be strictly increasing.
    pub fn principal_submatrix(&self, keep: &[usize]) -> CsrMatrix {
        let mut indptr = Vec::with_capacity(keep.len() + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for &r in keep {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                if let Ok(local) = keep.binary_search(&c) {
                    indices.push(local);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows: keep.len(),
            ncols: keep.len(),
            indptr,
            indices,
            values,
        }
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut t = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            t.extend(cols.iter().zip(vals).map(|(&c, &v)| (c, r, v)));
        }
        CsrMatrix::from_triplets(self.ncols, self.nrows, t)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                d[(r, c)] += v;
            }
        }
        d
    }

    /// Exact structural and numerical symmetry.
    pub fn is_symmetric(&self) -> bool {
        self.nrows == self.ncols
            && (0..self.nrows).all(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).all(|(&c, &v)| self.get(c, r) == v)
            })
    }

    /// Maximum distance of a stored entry from the diagonal.
    pub fn bandwidth(&self) -> usize {
        (0..self.nrows)
            .flat_map(|r| self.row(r).0.iter().map(move |&c| r.abs_diff(c)))
            .max()
            .unwrap_or(0)
    }

    /// `self + alpha * other` for matrices of equal shape.
    pub fn add_scaled(&self, alpha: f64, other: &CsrMatrix) -> CsrMatrix {
        let mut t = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            t.extend(cols.iter().zip(vals).map(|(&c, &v)| (r, c, v)));
            let (cols, vals) = other.row(r);
            t.extend(cols.iter().zip(vals).map(|(&c, &v)| (r, c, alpha * v)));
        }
        CsrMatrix::from_triplets(self.nrows, self.ncols, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(1, 0, 1.0), (0, 0, 2.0), (1, 0, 3.0), (0, 1, -1.0)]);
        assert_eq!(a.get(1, 0), 4.0);
        assert_eq!(a.get(0, 0), 2.0);
        assert_eq!(a.get(1, 1), 0.0);
        assert_eq!(a.matvec(&[1.0, 2.0]), vec![0.0, 4.0]);
        assert_eq!(a.transpose().get(0, 1), 4.0);
    }

    #[test]
    fn submatrix_and_band() {
        let d = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 5.0, 2.0, 0.0, 2.0, 6.0]);
        let a = CsrMatrix::from_dense(&d);
        assert!(a.is_symmetric());
        assert_eq!(a.bandwidth(), 1);
        let s = a.principal_submatrix(&[0, 2]);
        assert_eq!(s.to_dense(), DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 6.0]));
        assert_eq!(a.bilinear(&[1.0, 0.0, 1.0], &[0.0, 1.0, 0.0]), 3.0);
    }
}
