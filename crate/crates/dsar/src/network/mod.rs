//! Sparse network representation, partitioning, and worker shards.
//!
//! Notation (kept consistent across the crate):
//!   A        : 0/1 adjacency, row i = followees of node i
//!   W        : row-normalized weights, w_ij = a_ij / n_i, n_i = sum_j a_ij
//!   dtilde_i : i-th diagonal entry of W'W  (column squared sums)
//!   S_k      : node set of worker k, alpha_k = N_k / N

mod csr;
mod io;
mod partition;
mod shard;

pub use csr::CsrMatrix;
pub use io::{read_edge_list, write_edge_list, IdRemap};
pub use partition::{partition_uniform, Partition};
pub use shard::{build_shard, shard_storage_report, NodeStats, ShardRows, StorageReport, WorkerShard};

use crate::error::{Error, Result};

/// Global graph: adjacency plus row-normalized weights in compressed form.
///
/// Immutable after construction; column access to `W` is served by a
/// precomputed transpose since both row and column slices are needed by the
/// per-node residual terms.
#[derive(Debug, Clone)]
pub struct SparseNetwork {
    n_nodes: usize,
    adjacency: CsrMatrix,
    weights: CsrMatrix,
    weights_t: CsrMatrix,
    col_sq_sums: Vec<f64>,
}

impl SparseNetwork {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    /// Row-normalized weight matrix W (rows).
    pub fn weights(&self) -> &CsrMatrix {
        &self.weights
    }

    /// Transpose of W; row i of this matrix is column i of W.
    pub fn weights_t(&self) -> &CsrMatrix {
        &self.weights_t
    }

    /// diag(W'W) entries.
    pub fn col_sq_sums(&self) -> &[f64] {
        &self.col_sq_sums
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.nnz()
    }

    /// Largest row sum of W; 1 for any node with out-edges, 0 otherwise.
    pub fn max_row_sum(&self) -> f64 {
        (0..self.n_nodes)
            .map(|i| self.weights.row(i).map(|(_, v)| v).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Row-normalize a 0/1 adjacency matrix into a [`SparseNetwork`].
///
/// Self-loops are stripped with a warning. Rows with zero out-degree stay
/// all-zero in W; such nodes simply carry no network regressor term.
pub fn row_normalize(adjacency: CsrMatrix) -> Result<SparseNetwork> {
    if adjacency.n_rows() != adjacency.n_cols() {
        return Err(Error::Dimension(format!(
            "adjacency must be square, got {} x {}",
            adjacency.n_rows(),
            adjacency.n_cols()
        )));
    }
    let n = adjacency.n_rows();

    let mut self_loops = 0usize;
    let mut zero_rows = 0usize;
    let mut a_rows: Vec<Vec<(u32, f64)>> = Vec::with_capacity(n);
    let mut w_rows: Vec<Vec<(u32, f64)>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut row: Vec<(u32, f64)> = adjacency
            .row(i)
            .filter(|&(j, _)| {
                let keep = j as usize != i;
                if !keep {
                    self_loops += 1;
                }
                keep
            })
            .collect();
        row.retain(|&(_, v)| v != 0.0);
        let degree: f64 = row.iter().map(|&(_, v)| v).sum();
        if row.is_empty() {
            zero_rows += 1;
            a_rows.push(Vec::new());
            w_rows.push(Vec::new());
        } else {
            w_rows.push(row.iter().map(|&(j, v)| (j, v / degree)).collect());
            a_rows.push(row);
        }
    }
    if self_loops > 0 {
        log::warn!("stripped {self_loops} self-loop(s) from adjacency");
    }
    if zero_rows > 0 {
        log::warn!(
            "{zero_rows} node(s) have zero out-degree; their weight rows are zero \
             and they carry no network regressor term"
        );
    }

    let adjacency = CsrMatrix::from_rows(n, a_rows);
    let weights = CsrMatrix::from_rows(n, w_rows);
    let weights_t = weights.transpose();
    let mut col_sq_sums = vec![0.0f64; n];
    for (i, slot) in col_sq_sums.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (_, v) in weights_t.row(i) {
            acc += v * v;
        }
        *slot = acc;
    }

    Ok(SparseNetwork {
        n_nodes: n,
        adjacency,
        weights,
        weights_t,
        col_sq_sums,
    })
}
