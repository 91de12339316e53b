//! Symmetric sparse matrix stored as full CSR (both triangles).
//!
//! Storing both triangles doubles memory but makes `C·R` a plain row-wise
//! gather, which parallelizes without write conflicts and gives bitwise
//! identical results for any thread count.

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::Mat;

/// Rows below this count are multiplied serially.
const PAR_ROWS: usize = 4096;

#[derive(Debug, Error, PartialEq)]
pub enum SparseError {
    #[error("entry ({row}, {col}) is outside a {n}x{n} matrix")]
    OutOfBounds { row: usize, col: usize, n: usize },
    #[error("entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymCsr {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SymCsr {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            indptr: vec![0; n + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let trip: Vec<_> = diag
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, &v)| (i, i, v))
            .collect();
        Self::from_triplets(diag.len(), &trip).expect("diagonal entries are in bounds")
    }

    /// Builds the matrix from 0-based triplets. Each triplet `(i, j, v)` sets
    /// both `C[i][j]` and `C[j][i]`; duplicates of the same unordered pair are
    /// summed. Explicit zeros are dropped.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self, SparseError> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * triplets.len());
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(SparseError::OutOfBounds { row: i, col: j, n });
            }
            if !v.is_finite() {
                return Err(SparseError::NonFinite { row: i, col: j });
            }
            entries.push((i, j, v));
            if i != j {
                entries.push((j, i, v));
            }
        }
        entries.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut indptr = vec![0usize; n + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((i, j));
            indices.push(j);
            values.push(v);
            indptr[i + 1] += 1;
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        let mut m = Self {
            n,
            indptr,
            indices,
            values,
        };
        m.drop_zeros();
        Ok(m)
    }

    fn drop_zeros(&mut self) {
        if self.values.iter().all(|v| *v != 0.0) {
            return;
        }
        let mut indptr = vec![0usize; self.n + 1];
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut values = Vec::with_capacity(self.values.len());
        for i in 0..self.n {
            for k in self.indptr[i]..self.indptr[i + 1] {
                if self.values[k] != 0.0 {
                    indices.push(self.indices[k]);
                    values.push(self.values[k]);
                }
            }
            indptr[i + 1] = indices.len();
        }
        self.indptr = indptr;
        self.indices = indices;
        self.values = values;
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Stored entries, counting both triangles.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterator over `(col, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[i]..self.indptr[i + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Upper-triangle entries `(i, j, v)` with `i <= j`.
    pub fn upper_triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            self.row(i)
                .filter(move |(j, _)| *j >= i)
                .map(move |(j, v)| (i, j, v))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.indptr[i]..self.indptr[i + 1];
        match self.indices[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn is_diagonal(&self) -> bool {
        self.bandwidth() == 0
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|v| *v >= 0.0)
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// `y = C x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        let row_dot = |i: usize| -> f64 {
            let mut s = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                s += self.values[k] * x[self.indices[k]];
            }
            s
        };
        if self.n >= PAR_ROWS {
            y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = row_dot(i));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = row_dot(i);
            }
        }
    }

    /// `C R` for a dense row-major `R`.
    pub fn mul_dense(&self, r: &Mat) -> Mat {
        assert_eq!(r.rows(), self.n);
        let cols = r.cols();
        let mut out = Mat::zeros(self.n, cols);
        if cols == 0 {
            return out;
        }
        let fill = |i: usize, dst: &mut [f64]| {
            for k in self.indptr[i]..self.indptr[i + 1] {
                let v = self.values[k];
                let src = r.row(self.indices[k]);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        };
        if self.n >= PAR_ROWS {
            out.as_mut_slice()
                .par_chunks_mut(cols)
                .enumerate()
                .for_each(|(i, dst)| fill(i, dst));
        } else {
            for (i, dst) in out.as_mut_slice().chunks_mut(cols).enumerate() {
                fill(i, dst);
            }
        }
        out
    }

    /// `xᵀ C x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let cx = self.mul_vec(x);
        crate::linalg::dot(x, &cx)
    }

    /// Dense row-major copy; for tests and small problems.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[i * self.n + j] = v;
            }
        }
        d
    }

    /// Applies `f` to every stored value, keeping the pattern symmetric.
    pub fn map_values(&self, f: impl Fn(usize, usize, f64) -> f64) -> SymCsr {
        let trip: Vec<_> = self.upper_triplets().map(|(i, j, v)| (i, j, f(i, j, v))).collect();
        SymCsr::from_triplets(self.n, &trip).expect("pattern already validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SymCsr {
        SymCsr::from_triplets(3, &[(0, 1, 1.0), (1, 2, 2.0), (2, 2, 5.0)]).unwrap()
    }

    #[test]
    fn triplets_are_symmetrized() {
        let c = sample();
        assert_eq!(c.get(1, 0), 1.0);
        assert_eq!(c.get(2, 1), 2.0);
        assert_eq!(c.get(2, 2), 5.0);
        assert_eq!(c.nnz(), 5);
        assert_eq!(c.bandwidth(), 1);
    }

    #[test]
    fn duplicates_are_summed() {
        let c = SymCsr::from_triplets(2, &[(0, 1, 1.0), (1, 0, 2.0)]).unwrap();
        assert_eq!(c.get(0, 1), 3.0);
    }

    #[test]
    fn out_of_bounds_is_rejected() {
        let err = SymCsr::from_triplets(2, &[(0, 2, 1.0)]).unwrap_err();
        assert_eq!(err, SparseError::OutOfBounds { row: 0, col: 2, n: 2 });
    }

    #[test]
    fn mul_dense_matches_dense_product() {
        let c = sample();
        let r = Mat::from_fn(3, 2, |i, j| (1 + i + 3 * j) as f64);
        let cr = c.mul_dense(&r);
        let d = c.to_dense();
        for i in 0..3 {
            for j in 0..2 {
                let want: f64 = (0..3).map(|k| d[i * 3 + k] * r[(k, j)]).sum();
                assert_eq!(cr[(i, j)], want);
            }
        }
    }
}
