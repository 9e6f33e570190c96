//! Dense reference implementations for validation at small n.
//!
//! Everything here is O(n^2) or worse and deliberately written as a direct
//! transcription of the defining formulas, independent of the sparse/factored
//! production paths it is used to check. Guarded to n <= 1000; the test suite
//! uses it at n <= a few hundred.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::mat::RowMatrix;
use crate::network::{row_normalize, CsrMatrix, SparseNetwork};

const ORACLE_LIMIT: usize = 1000;

fn guard(n: usize) {
    assert!(
        n <= ORACLE_LIMIT,
        "dense oracle invoked with n = {n} > {ORACLE_LIMIT}"
    );
}

/// Random Bernoulli(p) digraph with zero diagonal, for test inputs.
pub fn random_net(n: usize, p_edge: f64, seed: u64) -> SparseNetwork {
    guard(n);
    let mut rng = crate::rng::seed_rng(seed);
    let mut triplets = Vec::new();
    for i in 0..n as u32 {
        for j in 0..n as u32 {
            if i != j && rng.random::<f64>() < p_edge {
                triplets.push((i, j, 1.0));
            }
        }
    }
    let a = CsrMatrix::from_triplets(n, n, triplets).unwrap();
    row_normalize(a).unwrap()
}

/// Dense copy of the adjacency.
pub fn dense_adjacency(net: &SparseNetwork) -> DMatrix<f64> {
    guard(net.n_nodes());
    let n = net.n_nodes();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for (j, v) in net.adjacency().row(i) {
            a[(i, j as usize)] = v;
        }
    }
    a
}

/// Dense copy of W.
pub fn dense_w(net: &SparseNetwork) -> DMatrix<f64> {
    guard(net.n_nodes());
    let n = net.n_nodes();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for (j, v) in net.weights().row(i) {
            w[(i, j as usize)] = v;
        }
    }
    w
}

/// Row normalization computed the obvious dense way.
pub fn dense_row_normalize(a: &DMatrix<f64>) -> DMatrix<f64> {
    guard(a.nrows());
    let mut w = a.clone();
    for i in 0..a.nrows() {
        let deg: f64 = a.row(i).sum();
        if deg > 0.0 {
            for j in 0..a.ncols() {
                w[(i, j)] /= deg;
            }
        }
    }
    w
}

/// W'W as a dense matrix.
pub fn dense_wtw(net: &SparseNetwork) -> DMatrix<f64> {
    let w = dense_w(net);
    w.transpose() * &w
}

/// Diagonal of D = (I + rho^2 diag(W'W))^{-1}.
pub fn dense_d_diag(net: &SparseNetwork, rho: f64) -> DVector<f64> {
    let wtw = dense_wtw(net);
    DVector::from_fn(net.n_nodes(), |i, _| 1.0 / (1.0 + rho * rho * wtw[(i, i)]))
}

/// S = I - rho W.
pub fn dense_s(net: &SparseNetwork, rho: f64) -> DMatrix<f64> {
    let n = net.n_nodes();
    DMatrix::identity(n, n) - dense_w(net) * rho
}

fn diag(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(v)
}

/// Full residual vector F(theta) = D S' (S y - X beta).
pub fn dense_f(
    net: &SparseNetwork,
    y: &[f64],
    x: &RowMatrix,
    rho: f64,
    beta: &[f64],
) -> DVector<f64> {
    let n = net.n_nodes();
    guard(n);
    let s = dense_s(net, rho);
    let d = dense_d_diag(net, rho);
    let yv = DVector::from_column_slice(y);
    let xb = DVector::from_fn(n, |i, _| {
        x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()
    });
    let inner = &s * yv - xb;
    let mut out = s.transpose() * inner;
    for i in 0..n {
        out[i] *= d[i];
    }
    out
}

/// Q over a node subset: |set|^{-1} sum_{i in set} F_i(theta)^2.
pub fn dense_objective(
    net: &SparseNetwork,
    y: &[f64],
    x: &RowMatrix,
    rho: f64,
    beta: &[f64],
    set: &[u32],
) -> f64 {
    let f = dense_f(net, y, x, rho, beta);
    set.iter().map(|&i| f[i as usize] * f[i as usize]).sum::<f64>() / set.len() as f64
}

/// Central finite-difference gradient of a scalar function.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, at: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; at.len()];
    let mut probe = at.to_vec();
    for j in 0..at.len() {
        probe[j] = at[j] + h;
        let up = f(&probe);
        probe[j] = at[j] - h;
        let down = f(&probe);
        probe[j] = at[j];
        grad[j] = (up - down) / (2.0 * h);
    }
    grad
}

/// Central finite-difference Hessian via gradient differences.
pub fn fd_hessian<F: FnMut(&[f64]) -> f64>(mut f: F, at: &[f64], h: f64) -> DMatrix<f64> {
    let dim = at.len();
    let mut hess = DMatrix::zeros(dim, dim);
    let mut probe = at.to_vec();
    for j in 0..dim {
        probe[j] = at[j] + h;
        let gu = fd_gradient(&mut f, &probe, h);
        probe[j] = at[j] - h;
        let gd = fd_gradient(&mut f, &probe, h);
        probe[j] = at[j];
        for i in 0..dim {
            hess[(i, j)] += (gu[i] - gd[i]) / (2.0 * h);
        }
    }
    // Symmetrize the numerical noise away.
    let ht = hess.transpose();
    (hess + ht) * 0.5
}

/// Dense per-worker covariance factors.
pub struct DenseFactors {
    pub xi_dag: DMatrix<f64>,
    pub v1: DMatrix<f64>,
    pub v2: DMatrix<f64>,
    pub t1: DVector<f64>,
    pub t2: DVector<f64>,
    pub t3: DMatrix<f64>,
    pub n_local: usize,
}

/// Build the worker-k factor matrices densely:
///
///   Xi_k  = (S'S Ddot - S'W D - W'S D) J_k D
///   V_1k  = D S' J_k,           V_2k = Mtilde J_k D S'
///   T_1k  = y' W' S D J_k D S', T_2k = y' S' W D J_k D S'
///   T_3k  = X' S D J_k D S'
///
/// with Ddot = -2 rho D^2 diag(W'W) and Mtilde the six-term symmetric
/// combination of D, Ddot, S, W.
pub fn dense_factors(
    net: &SparseNetwork,
    y: &[f64],
    x: &RowMatrix,
    rho: f64,
    set: &[u32],
) -> DenseFactors {
    let n = net.n_nodes();
    guard(n);
    let w = dense_w(net);
    let s = dense_s(net, rho);
    let dvec = dense_d_diag(net, rho);
    let wtw = dense_wtw(net);
    let ddot_vec = DVector::from_fn(n, |i, _| -2.0 * rho * dvec[i] * dvec[i] * wtw[(i, i)]);
    let d = diag(&dvec);
    let ddot = diag(&ddot_vec);
    let mut jk = DMatrix::zeros(n, n);
    for &i in set {
        jk[(i as usize, i as usize)] = 1.0;
    }

    let st = s.transpose();
    let wt = w.transpose();
    let sts = &st * &s;
    let stw = &st * &w;
    let wts = &wt * &s;

    let xi_dag = (&sts * &ddot - &stw * &d - &wts * &d) * &jk * &d;
    let v1 = &d * &st * &jk;
    let mtilde = &ddot * &sts * &ddot - &ddot * &stw * &d - &ddot * &wts * &d
        - &d * &wts * &ddot
        + &d * (&wt * &w) * &d
        - &d * &stw * &ddot;
    let v2 = &mtilde * &jk * &d * &st;

    let yv = DVector::from_column_slice(y);
    let core = &d * &jk * &d * &st; // shared right part D J_k D S'
    let t1 = (yv.transpose() * &wt * &s * &core).transpose();
    let t2 = (yv.transpose() * &st * &w * &core).transpose();
    let xm = DMatrix::from_fn(n, x.n_cols(), |i, j| x.row(i)[j]);
    let t3 = xm.transpose() * &s * &core;

    DenseFactors {
        xi_dag,
        v1,
        v2,
        t1,
        t2,
        t3,
        n_local: set.len(),
    }
}

/// Assemble the pooled score covariance estimate from dense factors:
/// Sigma1 = sum_{k,l} sqrt(alpha_k alpha_l) Sigma1_kl with the rho, rho-beta
/// and beta blocks built from trace and cross products of the factors.
pub fn dense_sigma1(
    factors: &[DenseFactors],
    alphas: &[f64],
    sigma2_eps: f64,
    sigma2_tilde: f64,
    cross_sign: f64,
) -> DMatrix<f64> {
    let p = factors[0].t3.nrows();
    let dim = p + 1;
    let mut sigma1 = DMatrix::zeros(dim, dim);
    for (k, fk) in factors.iter().enumerate() {
        for (l, fl) in factors.iter().enumerate() {
            let scale = (alphas[k] * alphas[l]).sqrt();
            let inv_sqrt_nknl = 1.0 / ((fk.n_local as f64) * (fl.n_local as f64)).sqrt();

            let tr_xi = (&fk.xi_dag * &fl.xi_dag).trace();
            let tr_v = (fk.v1.transpose() * &fl.v2).trace();
            let t1k_t2l = fk.t1.dot(&fl.t2);
            let t2k_t1l = fk.t2.dot(&fl.t1);
            let t1k_t1l = fk.t1.dot(&fl.t1);
            let rho_rho = 4.0
                * inv_sqrt_nknl
                * (sigma2_eps * sigma2_eps * (tr_xi + tr_v + (t1k_t2l + t2k_t1l) / sigma2_tilde)
                    + sigma2_eps * t1k_t1l);

            let rho_beta = &fl.t3 * &fk.t1 * (cross_sign * 4.0 * sigma2_eps * inv_sqrt_nknl);
            let beta_rho = &fk.t3 * &fl.t1 * (cross_sign * 4.0 * sigma2_eps * inv_sqrt_nknl);
            let beta_beta = &fk.t3 * fl.t3.transpose() * (4.0 * sigma2_eps * inv_sqrt_nknl);

            sigma1[(0, 0)] += scale * rho_rho;
            for a in 0..p {
                sigma1[(0, 1 + a)] += scale * rho_beta[a];
                sigma1[(1 + a, 0)] += scale * beta_rho[a];
                for b in 0..p {
                    sigma1[(1 + a, 1 + b)] += scale * beta_beta[(a, b)];
                }
            }
        }
    }
    sigma1
}

/// Dense sandwich: Sigma2^{-1} Sigma1 Sigma2^{-1} / n.
pub fn dense_sandwich(
    sigma1: &DMatrix<f64>,
    sigma2: &DMatrix<f64>,
    n_nodes: usize,
) -> DMatrix<f64> {
    let inv = sigma2
        .clone()
        .try_inverse()
        .expect("oracle sandwich: singular Sigma2");
    let sym = (sigma1 + sigma1.transpose()) * 0.5;
    &inv * sym * &inv / n_nodes as f64
}

/// Independent dense minimizer of the objective over a node subset: a coarse
/// grid scan over rho followed by golden-section refinement, with beta
/// profiled out by dense least squares at each rho.
pub fn dense_profile_fit(
    net: &SparseNetwork,
    y: &[f64],
    x: &RowMatrix,
    set: &[u32],
    rho_min: f64,
    rho_max: f64,
) -> (f64, Vec<f64>) {
    let profile = |rho: f64| -> (f64, Vec<f64>) {
        let n = net.n_nodes();
        let s = dense_s(net, rho);
        let d = dense_d_diag(net, rho);
        let yv = DVector::from_column_slice(y);
        let w_full = {
            let mut v = s.transpose() * (&s * yv);
            for i in 0..n {
                v[i] *= d[i];
            }
            v
        };
        let xm = DMatrix::from_fn(n, x.n_cols(), |i, j| x.row(i)[j]);
        let mut z_full = s.transpose() * xm;
        for i in 0..n {
            for j in 0..x.n_cols() {
                z_full[(i, j)] *= d[i];
            }
        }
        // Restrict to the subset rows.
        let rows: Vec<usize> = set.iter().map(|&i| i as usize).collect();
        let z = DMatrix::from_fn(rows.len(), x.n_cols(), |r, c| z_full[(rows[r], c)]);
        let w = DVector::from_fn(rows.len(), |r, _| w_full[rows[r]]);
        let beta = (z.transpose() * &z)
            .lu()
            .solve(&(z.transpose() * &w))
            .expect("oracle profile: singular normal equations");
        let resid = &w - &z * &beta;
        (
            resid.norm_squared() / rows.len() as f64,
            beta.iter().copied().collect(),
        )
    };

    // Coarse scan, then golden section inside the best bracket.
    let grid = 200;
    let mut best_i = 0usize;
    let mut best_v = f64::INFINITY;
    for i in 0..=grid {
        let rho = rho_min + (rho_max - rho_min) * i as f64 / grid as f64;
        let (v, _) = profile(rho);
        if v < best_v {
            best_v = v;
            best_i = i;
        }
    }
    let step = (rho_max - rho_min) / grid as f64;
    let mut lo = rho_min + step * best_i.saturating_sub(1) as f64;
    let mut hi = (rho_min + step * (best_i + 1) as f64).min(rho_max);
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - phi * (hi - lo);
    let mut b = lo + phi * (hi - lo);
    let mut fa = profile(a).0;
    let mut fb = profile(b).0;
    for _ in 0..120 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = profile(a).0;
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = profile(b).0;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let rho = 0.5 * (lo + hi);
    let (_, beta) = profile(rho);
    (rho, beta)
}

/// Dense solve of (I - rho W) y = X beta + eps.
pub fn dense_solve_response(
    net: &SparseNetwork,
    x: &RowMatrix,
    beta: &[f64],
    rho: f64,
    eps: &[f64],
) -> Vec<f64> {
    let n = net.n_nodes();
    guard(n);
    let s = dense_s(net, rho);
    let rhs = DVector::from_fn(n, |i, _| {
        x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + eps[i]
    });
    let sol = s.lu().solve(&rhs).expect("oracle: S is singular");
    sol.iter().copied().collect()
}
