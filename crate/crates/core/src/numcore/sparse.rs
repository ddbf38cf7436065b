use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compressed sparse row matrix, used for normalised adjacencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicate coordinates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut trips: Vec<(usize, usize, f64)>) -> Self {
        trips.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(trips.len());
        let mut values: Vec<f64> = Vec::with_capacity(trips.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trips {
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of range");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..n_rows {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row_entries(r)
            .find(|&(j, _)| j == c)
            .map_or(0.0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.n_rows, self.n_cols]);
        for r in 0..self.n_rows {
            for (c, v) in self.row_entries(r) {
                t.set(r, c, v);
            }
        }
        t
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut trips = Vec::with_capacity(self.nnz());
        for r in 0..self.n_rows {
            for (c, v) in self.row_entries(r) {
                trips.push((c, r, v));
            }
        }
        CsrMatrix::from_triplets(self.n_cols, self.n_rows, trips)
    }

    /// `self · dense`.
    pub fn matmul(&self, dense: &Tensor) -> Result<Tensor> {
        let (r, c) = dense.require_matrix("spmm")?;
        if r != self.n_cols {
            return Err(Error::Shape {
                op: "spmm",
                left: vec![self.n_rows, self.n_cols],
                right: dense.shape().to_vec(),
            });
        }
        let mut out = Tensor::zeros(&[self.n_rows, c]);
        for i in 0..self.n_rows {
            let orow = out.row_mut(i);
            for (j, v) in self.row_entries(i) {
                for (o, &x) in orow.iter_mut().zip(dense.row(j)) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n_rows).all(|r| self.row_entries(r).all(|(c, v)| self.get(c, r) == v))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spmm_matches_dense() {
        let a = CsrMatrix::from_triplets(3, 3, vec![(0, 0, 1.0), (0, 2, 2.0), (2, 1, -1.0), (0, 2, 0.5)]);
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let dense = a.to_dense();
        assert_eq!(dense.get(0, 2), 2.5);
        let got = a.matmul(&x).unwrap();
        let want = dense.matmul(&x).unwrap();
        assert_eq!(got, want);
        assert_eq!(a.transpose().to_dense(), dense.transpose().unwrap());
    }
}
