//! Compressed sparse row storage.
//!
//! row_ptr  : prefix sums of row lengths, length n_rows + 1
//! col_idx  : concatenated column indices, length nnz
//! values   : matching entry values, length nnz
//!
//! Rows keep their column indices sorted ascending, which the shard builder
//! and factor products rely on for merge-style dot products.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from triplets. Duplicate (row, col) pairs are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(u32, u32, f64)>,
    ) -> Result<Self> {
        for &(r, c, _) in &triplets {
            if r as usize >= n_rows || c as usize >= n_cols {
                return Err(Error::Dimension(format!(
                    "triplet ({r}, {c}) outside {n_rows} x {n_cols}"
                )));
            }
        }
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));

        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if let (Some(&last_c), true) = (col_idx.last(), row_ptr[r as usize + 1] > 0) {
                if last_c == c && col_idx.len() > row_ptr[r as usize] {
                    *values.last_mut().unwrap() += v;
                    continue;
                }
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r as usize + 1] = col_idx.len();
        }
        // Rows with no entries inherit the running offset.
        for r in 1..=n_rows {
            if row_ptr[r] < row_ptr[r - 1] {
                row_ptr[r] = row_ptr[r - 1];
            }
        }
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Build directly from per-row (col, value) lists, columns already sorted.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(u32, f64)>>) -> Self {
        let n_rows = rows.len();
        let nnz = rows.iter().map(Vec::len).sum();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for row in rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0), "unsorted row");
            for (c, v) in row {
                debug_assert!((c as usize) < n_cols);
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
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
        self.col_idx.len()
    }

    /// Sorted (column, value) pairs of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn row_len(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    /// y = A x (dense vector).
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for (i, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, v) in self.row(i) {
                acc += v * x[j as usize];
            }
            *out = acc;
        }
    }

    /// Grow a square matrix to `n` rows/columns by appending empty rows.
    pub fn pad_square(&mut self, n: usize) {
        assert!(self.n_rows == self.n_cols, "pad_square on non-square matrix");
        assert!(n >= self.n_rows, "pad_square cannot shrink");
        let last = *self.row_ptr.last().unwrap();
        self.row_ptr.resize(n + 1, last);
        self.n_rows = n;
        self.n_cols = n;
    }

    /// Transposed copy (CSC view of the original as CSR of the transpose).
    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            counts[c as usize + 1] += 1;
        }
        for j in 1..=self.n_cols {
            counts[j] += counts[j - 1];
        }
        let row_ptr = counts.clone();
        let mut col_idx = vec![0u32; self.nnz()];
        let mut values = vec![0.0f64; self.nnz()];
        let mut cursor = counts;
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                let slot = cursor[j as usize];
                col_idx[slot] = i as u32;
                values[slot] = v;
                cursor[j as usize] += 1;
            }
        }
        CsrMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_ptr,
            col_idx,
            values,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_round_trip_and_transpose() {
        let a = CsrMatrix::from_triplets(
            3,
            3,
            vec![(0, 1, 1.0), (0, 2, 2.0), (2, 0, 3.0), (1, 1, 4.0)],
        )
        .unwrap();
        assert_eq!(a.nnz(), 4);
        assert_eq!(a.row(0).collect::<Vec<_>>(), vec![(1, 1.0), (2, 2.0)]);

        let at = a.transpose();
        assert_eq!(at.row(1).collect::<Vec<_>>(), vec![(0, 1.0), (1, 4.0)]);
        assert_eq!(at.row(0).collect::<Vec<_>>(), vec![(2, 3.0)]);

        let mut y = vec![0.0; 3];
        a.mul_vec(&[1.0, 1.0, 1.0], &mut y);
        assert_eq!(y, vec![3.0, 4.0, 3.0]);
    }

    #[test]
    fn duplicate_triplets_are_summed() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.5)]).unwrap();
        assert_eq!(a.nnz(), 1);
        assert_eq!(a.row(0).next(), Some((0, 3.5)));
    }

    #[test]
    fn out_of_range_triplet_is_rejected() {
        assert!(CsrMatrix::from_triplets(2, 2, vec![(0, 5, 1.0)]).is_err());
    }
}
