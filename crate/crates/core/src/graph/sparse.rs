use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{Real, Tensor};

/// Compressed-row sparse matrix with sorted column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<R> {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<R>,
}

impl<R: Real> CsrMatrix<R> {
    /// Builds from per-row `(column, value)` lists. Columns are sorted per row.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, R)>>) -> Self {
        let n_rows = rows.len();
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                debug_assert!(c < n_cols);
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
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
        self.indices.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[R] {
        &self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[R]) {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[s..e], &self.values[s..e])
    }

    pub fn get(&self, i: usize, j: usize) -> R {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => R::zero(),
        }
    }

    pub fn cast<S: Real>(&self) -> CsrMatrix<S> {
        CsrMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| S::from_f64(v.as_f64())).collect(),
        }
    }

    /// Row-major dense copy in f64.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows * self.n_cols];
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&c, v) in cols.iter().zip(vals) {
                out[i * self.n_cols + c] = v.as_f64();
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| self.row(i).1.iter().map(|v| v.as_f64()).sum())
            .collect()
    }

    /// `self · x` for a dense `[n_cols × f]` operand.
    pub fn matmul_dense(&self, x: &Tensor<R>) -> Tensor<R> {
        let f = x.cols();
        let mut out = Vec::with_capacity(self.n_rows * f);
        let mut acc = vec![0.0f64; f];
        for i in 0..self.n_rows {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let (cols, vals) = self.row(i);
            for (&c, v) in cols.iter().zip(vals) {
                let v = v.as_f64();
                for (a, xv) in acc.iter_mut().zip(x.row(c)) {
                    *a += v * xv.as_f64();
                }
            }
            out.extend(acc.iter().map(|&a| R::from_f64(a)));
        }
        Tensor::new(&[self.n_rows, f], out).expect("spmm shape")
    }

    /// `selfᵀ · y` for a dense `[n_rows × f]` operand.
    pub fn transpose_matmul_dense(&self, y: &Tensor<R>) -> Tensor<R> {
        let f = y.cols();
        let mut acc = vec![0.0f64; self.n_cols * f];
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            let yrow = y.row(i);
            for (&c, v) in cols.iter().zip(vals) {
                let v = v.as_f64();
                for (a, yv) in acc[c * f..(c + 1) * f].iter_mut().zip(yrow) {
                    *a += v * yv.as_f64();
                }
            }
        }
        Tensor::new(&[self.n_cols, f], acc.into_iter().map(R::from_f64).collect())
            .expect("spmm transpose shape")
    }

    /// `self · v` in f64.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&c, a)| a.as_f64() * v[c]).sum()
            })
            .collect()
    }
}
