//! Self-contained worker shards.
//!
//! A shard holds, for every local node i in S_k, the first- and second-order
//! neighborhood slices needed to evaluate the per-node residual F_i(theta)
//! without touching the global network:
//!
//!   out row     : w_ij over  N_i^out = { j : w_ij != 0 }
//!   in  column  : w_ji over  N_i^in  = { j : w_ji != 0 }
//!   second col  : w2_ji = sum_f w_fi w_fj over N_i^(2) = { j : w2_ji != 0 }
//!   dtilde_i    : diag(W'W)_i
//!
//! plus responses, covariates and dtilde values for every node referenced by
//! any stored neighborhood (the shard "universe"). Row indices inside the
//! shard are universe-local; `universe[idx]` maps back to global ids.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::mat::RowMatrix;
use crate::network::{Partition, SparseNetwork};

/// Per-local-node sparse rows with universe-local column indices.
#[derive(Debug, Clone, Default)]
pub struct ShardRows {
    ptr: Vec<usize>,
    idx: Vec<u32>,
    val: Vec<f64>,
}

impl ShardRows {
    fn with_capacity(n_rows: usize) -> Self {
        ShardRows {
            ptr: {
                let mut p = Vec::with_capacity(n_rows + 1);
                p.push(0);
                p
            },
            idx: Vec::new(),
            val: Vec::new(),
        }
    }

    fn push_row(&mut self, entries: &[(u32, f64)]) {
        for &(j, v) in entries {
            self.idx.push(j);
            self.val.push(v);
        }
        self.ptr.push(self.idx.len());
    }

    /// (universe index, value) pairs of row `i`, ascending index.
    #[inline]
    pub fn row(&self, i: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        let lo = self.ptr[i];
        let hi = self.ptr[i + 1];
        self.idx[lo..hi]
            .iter()
            .copied()
            .zip(self.val[lo..hi].iter().copied())
    }

    pub fn row_len(&self, i: usize) -> usize {
        self.ptr[i + 1] - self.ptr[i]
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }
}

/// Theta-free per-node statistics entering F_i(theta):
/// with y the response vector and X the covariates,
///
///   wy_out_i = W_{i.} y,  wy_in_i = W_{.i}' y,  w2y_i = W_{.i}' W y,
///   wx_in_i  = X' W_{.i}  (p-vector).
#[derive(Debug, Clone)]
pub struct NodeStats {
    pub wy_out: Vec<f64>,
    pub wy_in: Vec<f64>,
    pub w2y: Vec<f64>,
    pub wx_in: RowMatrix,
}

/// One worker's slice of the problem, detached from the global network.
#[derive(Debug, Clone)]
pub struct WorkerShard {
    worker_id: usize,
    n_total: usize,
    p: usize,
    local_nodes: Vec<u32>,
    out_rows: ShardRows,
    in_cols: ShardRows,
    second_order: ShardRows,
    dtilde_local: Vec<f64>,
    universe: Vec<u32>,
    u_responses: Vec<f64>,
    u_covariates: RowMatrix,
    u_dtilde: Vec<f64>,
    stats: NodeStats,
    /// Universe position of each local node.
    local_uidx: Vec<u32>,
}

impl WorkerShard {
    pub fn worker_id(&self) -> usize {
        self.worker_id
    }

    /// Total number of nodes N in the originating network.
    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn n_local(&self) -> usize {
        self.local_nodes.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Local nodes in ascending global id order.
    pub fn local_nodes(&self) -> &[u32] {
        &self.local_nodes
    }

    /// Position of global node `g` within the local set, if local.
    pub fn local_position(&self, g: u32) -> Option<usize> {
        self.local_nodes.binary_search(&g).ok()
    }

    pub fn out_rows(&self) -> &ShardRows {
        &self.out_rows
    }

    pub fn in_cols(&self) -> &ShardRows {
        &self.in_cols
    }

    pub fn second_order(&self) -> &ShardRows {
        &self.second_order
    }

    pub fn dtilde_local(&self) -> &[f64] {
        &self.dtilde_local
    }

    /// All node ids referenced by the shard (locals plus stored neighbors).
    pub fn universe(&self) -> &[u32] {
        &self.universe
    }

    pub fn universe_global(&self, uidx: u32) -> u32 {
        self.universe[uidx as usize]
    }

    pub fn universe_response(&self, uidx: u32) -> f64 {
        self.u_responses[uidx as usize]
    }

    pub fn universe_covariates(&self, uidx: u32) -> &[f64] {
        self.u_covariates.row(uidx as usize)
    }

    pub fn universe_dtilde(&self, uidx: u32) -> f64 {
        self.u_dtilde[uidx as usize]
    }

    pub fn stats(&self) -> &NodeStats {
        &self.stats
    }

    /// Response of the a-th local node.
    pub fn local_response(&self, a: usize) -> f64 {
        self.u_responses[self.local_uidx[a] as usize]
    }

    /// Covariate row of the a-th local node.
    pub fn local_covariates(&self, a: usize) -> &[f64] {
        self.u_covariates.row(self.local_uidx[a] as usize)
    }

    /// Universe index of the a-th local node.
    pub fn local_universe_idx(&self, a: usize) -> u32 {
        self.local_uidx[a]
    }
}

/// Build the self-contained shard for worker `k`.
pub fn build_shard(
    net: &SparseNetwork,
    part: &Partition,
    y: &[f64],
    x: &RowMatrix,
    k: usize,
) -> Result<WorkerShard> {
    let n = net.n_nodes();
    if y.len() != n || x.n_rows() != n {
        return Err(Error::Dimension(format!(
            "responses ({}) and covariate rows ({}) must match n_nodes ({n})",
            y.len(),
            x.n_rows()
        )));
    }
    if part.n_nodes() != n {
        return Err(Error::Dimension(format!(
            "partition covers {} nodes, network has {n}",
            part.n_nodes()
        )));
    }
    if k >= part.k_workers() {
        return Err(Error::InvalidConfig(format!(
            "worker index {k} out of range (K = {})",
            part.k_workers()
        )));
    }
    let p = x.n_cols();
    let locals = part.set(k);
    let n_local = locals.len();

    let w = net.weights();
    let wt = net.weights_t();

    // Gather raw global-indexed neighborhoods first.
    let mut out_raw: Vec<Vec<(u32, f64)>> = Vec::with_capacity(n_local);
    let mut in_raw: Vec<Vec<(u32, f64)>> = Vec::with_capacity(n_local);
    let mut second_raw: Vec<Vec<(u32, f64)>> = Vec::with_capacity(n_local);
    let mut referenced: Vec<u32> = locals.to_vec();
    for &g in locals {
        let gi = g as usize;
        let out: Vec<(u32, f64)> = w.row(gi).collect();
        let incol: Vec<(u32, f64)> = wt.row(gi).collect();

        // w2_ji over the local-second-order-network: accumulate over common
        // followers f of i and j.
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for (f, w_fi) in wt.row(gi) {
            for (j, w_fj) in w.row(f as usize) {
                *acc.entry(j).or_insert(0.0) += w_fi * w_fj;
            }
        }
        let mut second: Vec<(u32, f64)> = acc.into_iter().filter(|&(_, v)| v != 0.0).collect();
        second.sort_unstable_by_key(|&(j, _)| j);

        referenced.extend(out.iter().map(|&(j, _)| j));
        referenced.extend(incol.iter().map(|&(j, _)| j));
        referenced.extend(second.iter().map(|&(j, _)| j));
        out_raw.push(out);
        in_raw.push(incol);
        second_raw.push(second);
    }

    referenced.sort_unstable();
    referenced.dedup();
    let universe = referenced;
    let uindex: HashMap<u32, u32> = universe
        .iter()
        .enumerate()
        .map(|(i, &g)| (g, i as u32))
        .collect();

    let mut out_rows = ShardRows::with_capacity(n_local);
    let mut in_cols = ShardRows::with_capacity(n_local);
    let mut second_order = ShardRows::with_capacity(n_local);
    let remap = |entries: &[(u32, f64)]| -> Vec<(u32, f64)> {
        entries.iter().map(|&(j, v)| (uindex[&j], v)).collect()
    };
    for a in 0..n_local {
        out_rows.push_row(&remap(&out_raw[a]));
        in_cols.push_row(&remap(&in_raw[a]));
        second_order.push_row(&remap(&second_raw[a]));
    }

    let mut u_responses = Vec::with_capacity(universe.len());
    let mut u_covariates = RowMatrix::zeros(universe.len(), p);
    let mut u_dtilde = Vec::with_capacity(universe.len());
    for (ui, &g) in universe.iter().enumerate() {
        u_responses.push(y[g as usize]);
        u_covariates.row_mut(ui).copy_from_slice(x.row(g as usize));
        u_dtilde.push(net.col_sq_sums()[g as usize]);
    }

    let dtilde_local: Vec<f64> = locals
        .iter()
        .map(|&g| net.col_sq_sums()[g as usize])
        .collect();
    let local_uidx: Vec<u32> = locals.iter().map(|&g| uindex[&g]).collect();

    // Theta-free neighborhood statistics, computed once.
    let mut wy_out = vec![0.0f64; n_local];
    let mut wy_in = vec![0.0f64; n_local];
    let mut w2y = vec![0.0f64; n_local];
    let mut wx_in = RowMatrix::zeros(n_local, p);
    for a in 0..n_local {
        for (j, v) in out_rows.row(a) {
            wy_out[a] += v * u_responses[j as usize];
        }
        let row = wx_in.row_mut(a);
        for (j, v) in in_cols.row(a) {
            wy_in[a] += v * u_responses[j as usize];
            let xj = u_covariates.row(j as usize);
            for (dst, &xval) in row.iter_mut().zip(xj) {
                *dst += v * xval;
            }
        }
        for (j, v) in second_order.row(a) {
            w2y[a] += v * u_responses[j as usize];
        }
    }

    Ok(WorkerShard {
        worker_id: k,
        n_total: n,
        p,
        local_nodes: locals.to_vec(),
        out_rows,
        in_cols,
        second_order,
        dtilde_local,
        universe,
        u_responses,
        u_covariates,
        u_dtilde,
        stats: NodeStats {
            wy_out,
            wy_in,
            w2y,
            wx_in,
        },
        local_uidx,
    })
}

/// Per-worker storage counts and the overall duplication factor.
#[derive(Debug, Clone)]
pub struct StorageReport {
    pub per_worker: Vec<WorkerStorage>,
    /// (sum over workers of stored nodes) / N.
    pub duplication_factor: f64,
}

#[derive(Debug, Clone)]
pub struct WorkerStorage {
    pub worker_id: usize,
    pub n_local: usize,
    pub n_stored: usize,
    pub nnz_first_order: usize,
    pub nnz_second_order: usize,
}

/// Summarize how much node data the shards of one partition duplicate.
pub fn shard_storage_report(shards: &[WorkerShard]) -> StorageReport {
    let n_total = shards.first().map_or(0, |s| s.n_total());
    let per_worker: Vec<WorkerStorage> = shards
        .iter()
        .map(|s| WorkerStorage {
            worker_id: s.worker_id(),
            n_local: s.n_local(),
            n_stored: s.universe().len(),
            nnz_first_order: s.out_rows().nnz() + s.in_cols().nnz(),
            nnz_second_order: s.second_order().nnz(),
        })
        .collect();
    let stored_total: usize = per_worker.iter().map(|w| w.n_stored).sum();
    StorageReport {
        duplication_factor: if n_total == 0 {
            0.0
        } else {
            stored_total as f64 / n_total as f64
        },
        per_worker,
    }
}
