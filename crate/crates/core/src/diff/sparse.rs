//! Compressed sparse row matrix. Used for constant operators (normalized
//! adjacencies); it never carries a gradient.

use crate::diff::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicate coordinates are
    /// summed; column indices end up sorted within each row.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= rows || c >= cols {
                return Err(Error::ShapeMismatch {
                    op: "csr_from_triplets",
                    left: (rows, cols),
                    right: (r, c),
                });
            }
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            col_indices.push(c);
            values.push(v);
            row_offsets[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(CsrMatrix {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(m: &Matrix) -> Self {
        let mut triplets = Vec::new();
        for r in 0..m.rows() {
            for (c, &v) in m.row(r).iter().enumerate() {
                if v != 0.0 {
                    triplets.push((r, c, v));
                }
            }
        }
        Self::from_triplets(m.rows(), m.cols(), &triplets).expect("indices in range")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates `(col, value)` over the stored entries of row `r`.
    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        match self.col_indices[span.clone()].binary_search(&c) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                out[(r, c)] = v;
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row_entries(r).map(|(_, v)| v).sum()).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|r| self.row_entries(r).all(|(c, v)| self.get(c, r) == v))
    }

    /// `self · dense`
    pub fn spmm(&self, dense: &Matrix) -> Result<Matrix> {
        if self.cols != dense.rows() {
            return Err(Error::ShapeMismatch {
                op: "spmm",
                left: self.shape(),
                right: dense.shape(),
            });
        }
        let m = dense.cols();
        let mut out = Matrix::zeros(self.rows, m);
        for r in 0..self.rows {
            let out_row = out.row_mut(r);
            for (c, v) in self.row_entries(r) {
                for (o, &b) in out_row.iter_mut().zip(dense.row(c)) {
                    *o += v * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · dense`
    pub fn spmm_t(&self, dense: &Matrix) -> Result<Matrix> {
        if self.rows != dense.rows() {
            return Err(Error::ShapeMismatch {
                op: "spmm_t",
                left: self.shape(),
                right: dense.shape(),
            });
        }
        let m = dense.cols();
        let mut out = Matrix::zeros(self.cols, m);
        for r in 0..self.rows {
            let g_row = dense.row(r);
            for (c, v) in self.row_entries(r) {
                for (o, &g) in out.row_mut(c).iter_mut().zip(g_row) {
                    *o += v * g;
                }
            }
        }
        Ok(out)
    }

    /// Largest eigenvalue magnitude estimate by power iteration.
    pub fn power_iteration(&self, iterations: usize) -> f64 {
        let n = self.rows;
        if n == 0 {
            return 0.0;
        }
        // Non-uniform start so the estimate is not stuck in an invariant subspace.
        let mut x = Matrix::from_vec(n, 1, (0..n).map(|i| 1.0 + 0.1 * (i % 7) as f64).collect())
            .expect("length matches");
        let mut lambda = 0.0;
        for _ in 0..iterations {
            let y = self.spmm(&x).expect("square");
            let norm = y.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            let xn = x.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
            lambda = norm / xn;
            x = y.map(|v| v / norm);
        }
        lambda
    }
}
