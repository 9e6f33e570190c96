//! Per-worker score covariance factors and their exact pooling.
//!
//! With J_k the diagonal selector of S_k and E_k its N x N_k column slice, the
//! worker-k matrices factor through N x N_k blocks whose columns live on the
//! shard's stored neighborhoods:
//!
//!   Xi_k  = Xi1_k Xi2_k'   Xi1_k = (S'S Ddot - S'W D - W'S D) E_k,
//!                          Xi2_k = D E_k (single-entry columns)
//!   V_1k  = B_k E_k'       B_k  = D S' E_k
//!   V_2k  = C_k Bt_k'      C_k  = Mtilde E_k,  Bt_k = S D E_k
//!   T_1k  = phi' Bt_k',    phi_a = D_g (W_{g.} y - rho W_{.g}' W y)
//!   T_2k  = psi' Bt_k',    psi_a = D_g (W_{.g}' y - rho W_{.g}' W y)
//!   T_3k  = G_k Bt_k',     G_k[., a] = D_g (x_g - rho X' W_{.g})
//!
//! Everything is evaluated at the supplied theta (only rho enters). Columns
//! are stored as sorted (global row, value) pairs; nothing dense of size
//! N x N is ever formed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lse::{sigma2_eps_local, DsDiag, Theta};
use crate::mat::RowMatrix;
use crate::network::WorkerShard;
use crate::wire::Encoder;

use super::VariancePlugins;

/// Sparse column: sorted (global row id, value) pairs.
pub type SparseCol = Vec<(u32, f64)>;

/// Sign applied to the rho-beta cross block of the pooled score covariance.
///
/// The covariance of the rho-score and beta-score is +4 sigma_eps^2 T1 T3' up
/// to scaling: both scores carry a leading minus that cancels in the product,
/// and the Monte-Carlo oracle in the test suite confirms the positive sign
/// empirically (7% vs 18% relative error for the negated variant). The
/// negated convention appears in some derivations of this estimator and is
/// kept available for cross-checking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CrossBlockSign {
    #[default]
    Derived,
    Negated,
}

impl CrossBlockSign {
    fn factor(self) -> f64 {
        match self {
            CrossBlockSign::Derived => 1.0,
            CrossBlockSign::Negated => -1.0,
        }
    }
}

/// Factor matrices of one worker, self-contained for master-side pooling.
#[derive(Debug, Clone)]
pub struct WorkerFactors {
    pub worker_id: usize,
    pub n_total: usize,
    pub n_local: usize,
    pub p: usize,
    pub rho: f64,
    /// Ascending global ids of S_k; column order of all factors.
    pub local_nodes: Vec<u32>,
    /// D value of each local node (the single entry of the Xi2 column).
    pub d_local: Vec<f64>,
    pub xi1_cols: Vec<SparseCol>,
    pub b_cols: Vec<SparseCol>,
    pub btilde_cols: Vec<SparseCol>,
    pub c_cols: Vec<SparseCol>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    /// N_k x p row-major; row a is G_k[., a].
    pub g_cols: RowMatrix,
    /// Local part of sigma2_eps at theta (N_k^{-1} sum of squared residuals).
    pub sigma2_eps_part: f64,
    /// Local part of beta' (X'X/N) beta: N_k^{-1} sum (x_i' beta)^2.
    pub gram_quad_part: f64,
}

fn combine(parts: &[(f64, Vec<(u32, f64)>)]) -> SparseCol {
    let mut all: Vec<(u32, f64)> = Vec::new();
    for (coef, entries) in parts {
        if *coef == 0.0 {
            continue;
        }
        for &(j, v) in entries {
            all.push((j, coef * v));
        }
    }
    all.sort_unstable_by_key(|&(j, _)| j);
    let mut out: SparseCol = Vec::with_capacity(all.len());
    for (j, v) in all {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += v,
            _ => out.push((j, v)),
        }
    }
    out.retain(|&(_, v)| v != 0.0);
    out
}

pub(crate) fn sparse_lookup(col: &SparseCol, row: u32) -> Option<f64> {
    col.binary_search_by_key(&row, |e| e.0).ok().map(|i| col[i].1)
}

pub(crate) fn sparse_dot(a: &SparseCol, b: &SparseCol) -> f64 {
    let mut ia = 0;
    let mut ib = 0;
    let mut acc = 0.0;
    while ia < a.len() && ib < b.len() {
        match a[ia].0.cmp(&b[ib].0) {
            std::cmp::Ordering::Less => ia += 1,
            std::cmp::Ordering::Greater => ib += 1,
            std::cmp::Ordering::Equal => {
                acc += a[ia].1 * b[ib].1;
                ia += 1;
                ib += 1;
            }
        }
    }
    acc
}

/// Build all worker-k factors at the given theta.
pub fn build_factors(shard: &WorkerShard, theta: &Theta) -> Result<WorkerFactors> {
    if theta.beta.len() != shard.p() {
        return Err(Error::Dimension(format!(
            "beta has length {}, shard covariate dimension is {}",
            theta.beta.len(),
            shard.p()
        )));
    }
    let rho = theta.rho;
    let ds = DsDiag::new(rho);
    let n_local = shard.n_local();
    let p = shard.p();
    let stats = shard.stats();

    let mut factors = WorkerFactors {
        worker_id: shard.worker_id(),
        n_total: shard.n_total(),
        n_local,
        p,
        rho,
        local_nodes: shard.local_nodes().to_vec(),
        d_local: Vec::with_capacity(n_local),
        xi1_cols: Vec::with_capacity(n_local),
        b_cols: Vec::with_capacity(n_local),
        btilde_cols: Vec::with_capacity(n_local),
        c_cols: Vec::with_capacity(n_local),
        phi: Vec::with_capacity(n_local),
        psi: Vec::with_capacity(n_local),
        g_cols: RowMatrix::zeros(n_local, p),
        sigma2_eps_part: sigma2_eps_local(shard, theta),
        gram_quad_part: 0.0,
    };

    let to_global = |entries: SparseCol, shard: &WorkerShard| -> SparseCol {
        entries
            .into_iter()
            .map(|(u, v)| (shard.universe_global(u), v))
            .collect()
    };

    for a in 0..n_local {
        let g_uidx = shard.local_universe_idx(a);
        let dtilde = shard.dtilde_local()[a];
        let d_g = ds.d(dtilde);
        let ddot_g = ds.d_dot(dtilde);
        factors.d_local.push(d_g);

        let e_g: Vec<(u32, f64)> = vec![(g_uidx, 1.0)];
        let out: Vec<(u32, f64)> = shard.out_rows().row(a).collect();
        let incol: Vec<(u32, f64)> = shard.in_cols().row(a).collect();
        let sec: Vec<(u32, f64)> = shard.second_order().row(a).collect();

        // Xi1 column: ddot_g (S'S e) - d_g (S'W e) - d_g (W'S e), all of which
        // expand over {e_g, in, out, sec} with scalar coefficients.
        let xi1 = combine(&[
            (ddot_g, e_g.clone()),
            (-(rho * ddot_g + d_g), incol.clone()),
            (-(rho * ddot_g + d_g), out.clone()),
            (rho * rho * ddot_g + 2.0 * rho * d_g, sec.clone()),
        ]);
        factors.xi1_cols.push(to_global(xi1, shard));

        // B column: D (e_g - rho out-row), row-wise D.
        let mut b_col: SparseCol = Vec::with_capacity(out.len() + 1);
        b_col.push((g_uidx, d_g));
        for &(j, w) in &out {
            b_col.push((j, -rho * ds.d(shard.universe_dtilde(j)) * w));
        }
        b_col.sort_unstable_by_key(|&(j, _)| j);
        let b_col = combine(&[(1.0, b_col)]);
        factors.b_cols.push(to_global(b_col, shard));

        // Btilde column: D_g (e_g - rho in-col).
        let mut bt_col: SparseCol = Vec::with_capacity(incol.len() + 1);
        bt_col.push((g_uidx, d_g));
        for &(j, w) in &incol {
            bt_col.push((j, -rho * d_g * w));
        }
        bt_col.sort_unstable_by_key(|&(j, _)| j);
        let bt_col = combine(&[(1.0, bt_col)]);
        factors.btilde_cols.push(to_global(bt_col, shard));

        // Mtilde column: six terms over row-scaled versions of the same
        // building blocks, needing neighbor D and Ddot values.
        let sts_e = combine(&[
            (1.0, e_g.clone()),
            (-rho, incol.clone()),
            (-rho, out.clone()),
            (rho * rho, sec.clone()),
        ]);
        let stw_e = combine(&[(1.0, incol.clone()), (-rho, sec.clone())]);
        let wts_e = combine(&[(1.0, out.clone()), (-rho, sec.clone())]);
        let scale_rows = |entries: &SparseCol, use_ddot: bool| -> SparseCol {
            entries
                .iter()
                .map(|&(j, v)| {
                    let dt = shard.universe_dtilde(j);
                    let s = if use_ddot { ds.d_dot(dt) } else { ds.d(dt) };
                    (j, s * v)
                })
                .collect()
        };
        let c_col = combine(&[
            (ddot_g, scale_rows(&sts_e, true)),
            (-d_g, scale_rows(&stw_e, true)),
            (-d_g, scale_rows(&wts_e, true)),
            (-ddot_g, scale_rows(&wts_e, false)),
            (d_g, scale_rows(&sec, false)),
            (-ddot_g, scale_rows(&stw_e, false)),
        ]);
        factors.c_cols.push(to_global(c_col, shard));

        factors
            .phi
            .push(d_g * (stats.wy_out[a] - rho * stats.w2y[a]));
        factors
            .psi
            .push(d_g * (stats.wy_in[a] - rho * stats.w2y[a]));
        let x = shard.local_covariates(a);
        let gvec = stats.wx_in.row(a);
        let grow = factors.g_cols.row_mut(a);
        for j in 0..p {
            grow[j] = d_g * (x[j] - rho * gvec[j]);
        }

        let xb: f64 = x.iter().zip(&theta.beta).map(|(xi, bi)| xi * bi).sum();
        factors.gram_quad_part += xb * xb;
    }
    factors.gram_quad_part /= n_local as f64;
    Ok(factors)
}

impl WorkerFactors {
    /// Dense T vectors: t1 = Bt phi, t2 = Bt psi (length N) and T3 = G Bt'
    /// (p x N, row-major p rows).
    pub fn dense_t_vectors(&self) -> (Vec<f64>, Vec<f64>, RowMatrix) {
        let n = self.n_total;
        let mut t1 = vec![0.0f64; n];
        let mut t2 = vec![0.0f64; n];
        let mut t3 = RowMatrix::zeros(self.p, n);
        for a in 0..self.n_local {
            let phi = self.phi[a];
            let psi = self.psi[a];
            let g = self.g_cols.row(a).to_vec();
            for &(row, v) in &self.btilde_cols[a] {
                let r = row as usize;
                t1[r] += phi * v;
                t2[r] += psi * v;
                for (j, &gj) in g.iter().enumerate() {
                    t3.row_mut(j)[r] += gj * v;
                }
            }
        }
        (t1, t2, t3)
    }

    /// Canonical encoding (used for exact-mode transfer accounting).
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.put_u32(self.worker_id as u32);
        e.put_u64(self.n_total as u64);
        e.put_u64(self.n_local as u64);
        e.put_u32(self.p as u32);
        e.put_f64(self.rho);
        e.put_f64(self.sigma2_eps_part);
        e.put_f64(self.gram_quad_part);
        for &g in &self.local_nodes {
            e.put_u32(g);
        }
        e.put_f64_slice(&self.d_local);
        e.put_f64_slice(&self.phi);
        e.put_f64_slice(&self.psi);
        e.put_f64_slice(self.g_cols.data());
        for cols in [&self.xi1_cols, &self.b_cols, &self.btilde_cols, &self.c_cols] {
            for col in cols.iter() {
                e.put_u32(col.len() as u32);
                for &(j, v) in col {
                    e.put_u32(j);
                    e.put_f64(v);
                }
            }
        }
        e.finish()
    }
}

/// Exact pooled score covariance from all workers' factors:
///
///   Sigma1 = sum_{k,l} sqrt(alpha_k alpha_l) Sigma1_kl,
///
/// with the rho block combining trace products of the Xi/V factors and T
/// cross products, and the beta blocks built from T1/T3. Trace products go
/// through the low-rank factorizations; cost is quadratic in K and linear in
/// the stored neighborhood sizes, never dense in N.
pub fn sigma1_exact(
    factors: &[WorkerFactors],
    alphas: &[f64],
    plugins: &VariancePlugins,
    sign: CrossBlockSign,
) -> Result<DMatrix<f64>> {
    if factors.is_empty() {
        return Err(Error::Aggregation("no worker factors supplied".into()));
    }
    if factors.len() != alphas.len() {
        return Err(Error::Dimension(format!(
            "{} factor sets vs {} alphas",
            factors.len(),
            alphas.len()
        )));
    }
    let p = factors[0].p;
    let dense_t: Vec<(Vec<f64>, Vec<f64>, RowMatrix)> = factors
        .iter()
        .map(WorkerFactors::dense_t_vectors)
        .collect();

    let products = |k: usize, l: usize| -> BlockProducts {
        let fk = &factors[k];
        let fl = &factors[l];
        let (t1k, t2k, t3k) = &dense_t[k];
        let (t1l, t2l, t3l) = &dense_t[l];

        // tr(Xi_k Xi_l) through the single-entry right factors.
        let mut tr_xi = 0.0;
        for (b, &gl_b) in fl.local_nodes.iter().enumerate() {
            for &(g, v) in &fl.xi1_cols[b] {
                if let Ok(a) = fk.local_nodes.binary_search(&g) {
                    if let Some(w) = sparse_lookup(&fk.xi1_cols[a], gl_b) {
                        tr_xi += fk.d_local[a] * v * fl.d_local[b] * w;
                    }
                }
            }
        }

        // tr(V1_k' V2_l) = sum_{a,b} <B_k[.,a], C_l[.,b]> Bt_l[g_a, b].
        let mut tr_v = 0.0;
        for b in 0..fl.n_local {
            for &(g, v) in &fl.btilde_cols[b] {
                if let Ok(a) = fk.local_nodes.binary_search(&g) {
                    tr_v += v * sparse_dot(&fk.b_cols[a], &fl.c_cols[b]);
                }
            }
        }

        let dot = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| x * y).sum()
        };
        let t1t2 = dot(t1k, t2l);
        let t2t1 = dot(t2k, t1l);
        let t1t1 = dot(t1k, t1l);
        let mut t1_t3 = DVector::zeros(p);
        let mut t3_t1 = DVector::zeros(p);
        let mut t3_t3 = DMatrix::zeros(p, p);
        for j in 0..p {
            t1_t3[j] = dot(t1k, t3l.row(j));
            t3_t1[j] = dot(t3k.row(j), t1l);
            for m in 0..p {
                t3_t3[(j, m)] = dot(t3k.row(j), t3l.row(m));
            }
        }
        BlockProducts {
            tr_xi,
            tr_v,
            t1t2,
            t2t1,
            t1t1,
            t1_t3,
            t3_t1,
            t3_t3,
        }
    };

    let n_locals: Vec<usize> = factors.iter().map(|f| f.n_local).collect();
    Ok(assemble_sigma1(
        p, alphas, &n_locals, plugins, sign, products,
    ))
}

/// Per-(k,l) scalar/vector products feeding one Sigma1 block.
pub(crate) struct BlockProducts {
    pub tr_xi: f64,
    pub tr_v: f64,
    pub t1t2: f64,
    pub t2t1: f64,
    pub t1t1: f64,
    pub t1_t3: DVector<f64>,
    pub t3_t1: DVector<f64>,
    pub t3_t3: DMatrix<f64>,
}

/// Shared Sigma1 assembly over all ordered worker pairs:
///
///   rho block : 4/sqrt(NkNl) [ s_e^2 { tr_xi + tr_v + (t1t2 + t2t1)/s_t }
///                              + s_e t1t1 ]
///   cross     : sign * 4 s_e / sqrt(NkNl) * T1 T3'
///   beta      : 4 s_e / sqrt(NkNl) * T3 T3'
///
/// where s_e = sigma2_eps_hat and s_t = sigma2_tilde_hat.
pub(crate) fn assemble_sigma1(
    p: usize,
    alphas: &[f64],
    n_locals: &[usize],
    plugins: &VariancePlugins,
    sign: CrossBlockSign,
    products: impl Fn(usize, usize) -> BlockProducts,
) -> DMatrix<f64> {
    let dim = p + 1;
    let s_e = plugins.sigma2_eps_hat;
    let s_t = plugins.sigma2_tilde_hat;
    let cross = sign.factor();
    let mut sigma1 = DMatrix::zeros(dim, dim);
    for k in 0..alphas.len() {
        for l in 0..alphas.len() {
            let pr = products(k, l);
            let scale = (alphas[k] * alphas[l]).sqrt();
            let inv = 1.0 / ((n_locals[k] as f64) * (n_locals[l] as f64)).sqrt();
            let rho_rho = 4.0
                * inv
                * (s_e * s_e * (pr.tr_xi + pr.tr_v + (pr.t1t2 + pr.t2t1) / s_t)
                    + s_e * pr.t1t1);
            sigma1[(0, 0)] += scale * rho_rho;
            for j in 0..p {
                sigma1[(0, 1 + j)] += scale * cross * 4.0 * s_e * inv * pr.t1_t3[j];
                sigma1[(1 + j, 0)] += scale * cross * 4.0 * s_e * inv * pr.t3_t1[j];
                for m in 0..p {
                    sigma1[(1 + j, 1 + m)] += scale * 4.0 * s_e * inv * pr.t3_t3[(j, m)];
                }
            }
        }
    }
    sigma1
}
