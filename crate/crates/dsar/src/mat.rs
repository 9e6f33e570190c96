//! Row-major dense matrix for node-level data (N x p covariates, p x N factors).
//!
//! Parameter-dimension linear algebra ((p+1) x (p+1) Hessians, d x d projected
//! blocks) uses `nalgebra`; this type only holds tall-and-skinny data arrays
//! where contiguous row access matters.

use crate::audit;

#[derive(Debug, Clone, PartialEq)]
pub struct RowMatrix {
    data: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
}

impl RowMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        audit::check_dense(n_rows, n_cols);
        RowMatrix {
            data: vec![0.0; n_rows * n_cols],
            n_rows,
            n_cols,
        }
    }

    /// Wrap an existing row-major buffer. Panics if the length is inconsistent.
    pub fn from_vec(data: Vec<f64>, n_rows: usize, n_cols: usize) -> Self {
        assert_eq!(data.len(), n_rows * n_cols, "row-major buffer length");
        audit::check_dense(n_rows, n_cols);
        RowMatrix {
            data,
            n_rows,
            n_cols,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Audited constructor for square nalgebra matrices used on the master side.
pub fn dmatrix_zeros(rows: usize, cols: usize) -> nalgebra::DMatrix<f64> {
    audit::check_dense(rows, cols);
    nalgebra::DMatrix::zeros(rows, cols)
}
