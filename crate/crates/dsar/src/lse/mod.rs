//! Least-squares SAR objective on a worker shard.
//!
//! Per node i the residual is F_i(theta) = e_i' D S' (S y - X beta) with
//! D = (I + rho^2 diag(W'W))^{-1} and S = I - rho W. Expanding S'S and S'X,
//! F_i only involves the shard-local statistics
//!
//!   a_i = W_{i.} y,  b_i = W_{.i}' y,  c_i = W_{.i}' W y,
//!   g_i = X' W_{.i}, dtilde_i = (W'W)_{ii}:
//!
//!   F_i = D_i [ y_i - rho (a_i + b_i) + rho^2 c_i - x_i' beta + rho g_i' beta ]
//!
//! The worker objective is Q_k(theta) = N_k^{-1} sum_{i in S_k} F_i^2.
//! Gradient and Hessian are exact chain-rule derivatives (no Gauss-Newton
//! truncation), using dD/drho = -2 rho D^2 diag(W'W).

mod solver;

pub use solver::{fit_local, one_newton_step, FitReport, SolverOptions};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::WorkerShard;
use crate::wire::Encoder;

/// Parameter vector theta = (rho, beta).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theta {
    pub rho: f64,
    pub beta: Vec<f64>,
}

impl Theta {
    pub fn new(rho: f64, beta: Vec<f64>) -> Self {
        Theta { rho, beta }
    }

    pub fn zeros(p: usize) -> Self {
        Theta {
            rho: 0.0,
            beta: vec![0.0; p],
        }
    }

    pub fn dim(&self) -> usize {
        self.beta.len() + 1
    }

    /// Stacked (rho, beta) column vector.
    pub fn as_dvector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        v[0] = self.rho;
        for (i, &b) in self.beta.iter().enumerate() {
            v[i + 1] = b;
        }
        v
    }

    pub fn from_dvector(v: &DVector<f64>) -> Self {
        Theta {
            rho: v[0],
            beta: v.iter().skip(1).copied().collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Theta) -> f64 {
        let mut d = (self.rho - other.rho).abs();
        for (a, b) in self.beta.iter().zip(&other.beta) {
            d = d.max((a - b).abs());
        }
        d
    }
}

/// Compact parameter space for rho.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThetaBounds {
    pub rho_min: f64,
    pub rho_max: f64,
}

impl Default for ThetaBounds {
    fn default() -> Self {
        ThetaBounds {
            rho_min: -0.99,
            rho_max: 0.99,
        }
    }
}

impl ThetaBounds {
    pub fn clamp(&self, rho: f64) -> f64 {
        rho.clamp(self.rho_min, self.rho_max)
    }

    pub fn contains(&self, rho: f64) -> bool {
        (self.rho_min..=self.rho_max).contains(&rho)
    }
}

/// Objective value with optional derivatives.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: Option<DVector<f64>>,
    pub hessian: Option<DMatrix<f64>>,
}

/// Diagonal operator handles for D, S and dD/drho at a fixed rho.
///
/// D never needs inversion: its entries are (1 + rho^2 dtilde_i)^{-1}, always
/// in (0, 1].
#[derive(Debug, Clone, Copy)]
pub struct DsDiag {
    pub rho: f64,
}

impl DsDiag {
    pub fn new(rho: f64) -> Self {
        DsDiag { rho }
    }

    /// D_ii for a node with diag(W'W) entry `dtilde`.
    #[inline]
    pub fn d(&self, dtilde: f64) -> f64 {
        1.0 / (1.0 + self.rho * self.rho * dtilde)
    }

    /// (dD/drho)_ii = -2 rho dtilde D_ii^2.
    #[inline]
    pub fn d_dot(&self, dtilde: f64) -> f64 {
        let d = self.d(dtilde);
        -2.0 * self.rho * dtilde * d * d
    }

    /// (d^2 D/drho^2)_ii.
    #[inline]
    pub fn d_ddot(&self, dtilde: f64) -> f64 {
        let d = self.d(dtilde);
        -2.0 * dtilde * d * d + 8.0 * self.rho * self.rho * dtilde * dtilde * d * d * d
    }
}

/// Evaluate F_i(theta) for every local node of a shard.
pub fn eval_f_local(shard: &WorkerShard, theta: &Theta) -> Result<Vec<f64>> {
    check_dims(shard, theta)?;
    let ds = DsDiag::new(theta.rho);
    let n = shard.n_local();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (u, _, _) = inner_terms(shard, theta, i);
        out.push(ds.d(shard.dtilde_local()[i]) * u);
    }
    Ok(out)
}

#[inline]
fn inner_terms(shard: &WorkerShard, theta: &Theta, i: usize) -> (f64, f64, f64) {
    let stats = shard.stats();
    let rho = theta.rho;
    let y = shard.local_response(i);
    let x = shard.local_covariates(i);
    let a = stats.wy_out[i];
    let b = stats.wy_in[i];
    let c = stats.w2y[i];
    let g = stats.wx_in.row(i);
    let xb: f64 = x.iter().zip(&theta.beta).map(|(xi, bi)| xi * bi).sum();
    let gb: f64 = g.iter().zip(&theta.beta).map(|(gi, bi)| gi * bi).sum();
    let u = y - rho * (a + b) + rho * rho * c - xb + rho * gb;
    let u_rho = -(a + b) + 2.0 * rho * c + gb;
    let u_rho_rho = 2.0 * c;
    (u, u_rho, u_rho_rho)
}

fn check_dims(shard: &WorkerShard, theta: &Theta) -> Result<()> {
    if theta.beta.len() != shard.p() {
        return Err(Error::Dimension(format!(
            "beta has length {}, shard covariate dimension is {}",
            theta.beta.len(),
            shard.p()
        )));
    }
    Ok(())
}

/// Evaluate Q_k and, for `order` >= 1/2, its analytic gradient/Hessian.
pub fn eval_objective(shard: &WorkerShard, theta: &Theta, order: u8) -> Result<ObjectiveEval> {
    check_dims(shard, theta)?;
    if order > 2 {
        return Err(Error::InvalidConfig(format!(
            "derivative order {order} unsupported (max 2)"
        )));
    }
    let p = shard.p();
    let dim = p + 1;
    let ds = DsDiag::new(theta.rho);
    let stats = shard.stats();
    let n = shard.n_local();

    let mut value = 0.0f64;
    let mut grad = if order >= 1 {
        Some(DVector::<f64>::zeros(dim))
    } else {
        None
    };
    let mut hess = if order >= 2 {
        Some(DMatrix::<f64>::zeros(dim, dim))
    } else {
        None
    };
    let mut f_beta = vec![0.0f64; p];

    for i in 0..n {
        let dtilde = shard.dtilde_local()[i];
        let d = ds.d(dtilde);
        let (u, u_rho, u_rho_rho) = inner_terms(shard, theta, i);
        let f = d * u;
        value += f * f;
        if order == 0 {
            continue;
        }

        let d_dot = ds.d_dot(dtilde);
        let x = shard.local_covariates(i);
        let g = stats.wx_in.row(i);
        // u_beta = -x + rho g; F_beta = D u_beta.
        for j in 0..p {
            f_beta[j] = d * (-x[j] + theta.rho * g[j]);
        }
        let f_rho = d_dot * u + d * u_rho;

        let grad = grad.as_mut().unwrap();
        grad[0] += 2.0 * f * f_rho;
        for j in 0..p {
            grad[j + 1] += 2.0 * f * f_beta[j];
        }

        if order >= 2 {
            let d_ddot = ds.d_ddot(dtilde);
            let f_rho_rho = d_ddot * u + 2.0 * d_dot * u_rho + d * u_rho_rho;
            let hess = hess.as_mut().unwrap();
            hess[(0, 0)] += 2.0 * (f_rho * f_rho + f * f_rho_rho);
            for j in 0..p {
                // F_rho_beta = Ddot u_beta + D g.
                let f_rho_beta = d_dot * (-x[j] + theta.rho * g[j]) + d * g[j];
                let v = 2.0 * (f_rho * f_beta[j] + f * f_rho_beta);
                hess[(0, j + 1)] += v;
                hess[(j + 1, 0)] += v;
                for l in 0..=j {
                    let w = 2.0 * f_beta[j] * f_beta[l];
                    hess[(j + 1, l + 1)] += w;
                    if l != j {
                        hess[(l + 1, j + 1)] += w;
                    }
                }
            }
        }
    }

    let scale = 1.0 / n as f64;
    value *= scale;
    if let Some(ref mut g) = grad {
        *g *= scale;
    }
    if let Some(ref mut h) = hess {
        *h *= scale;
    }
    Ok(ObjectiveEval {
        value,
        gradient: grad,
        hessian: hess,
    })
}

/// Mean squared structural residual N_k^{-1} sum_{i in S_k} (S y - X beta)_i^2.
pub fn sigma2_eps_local(shard: &WorkerShard, theta: &Theta) -> f64 {
    let stats = shard.stats();
    let n = shard.n_local();
    let mut acc = 0.0;
    for i in 0..n {
        let xb: f64 = shard
            .local_covariates(i)
            .iter()
            .zip(&theta.beta)
            .map(|(xi, bi)| xi * bi)
            .sum();
        let r = shard.local_response(i) - theta.rho * stats.wy_out[i] - xb;
        acc += r * r;
    }
    acc / n as f64
}

/// Worker-to-master estimation payload: local estimate plus curvature.
#[derive(Debug, Clone)]
pub struct LocalSummary {
    pub worker_id: usize,
    pub theta_hat: Theta,
    pub hessian_at_opt: DMatrix<f64>,
    pub n_local: usize,
    pub sigma2_eps_local: f64,
    pub byte_size: usize,
}

impl LocalSummary {
    pub fn new(
        worker_id: usize,
        theta_hat: Theta,
        hessian_at_opt: DMatrix<f64>,
        n_local: usize,
        sigma2_eps_local: f64,
    ) -> Self {
        let mut s = LocalSummary {
            worker_id,
            theta_hat,
            hessian_at_opt,
            n_local,
            sigma2_eps_local,
            byte_size: 0,
        };
        s.byte_size = s.encode().len();
        s
    }

    /// Canonical wire encoding; `byte_size` equals its length.
    pub fn encode(&self) -> Vec<u8> {
        let p = self.theta_hat.beta.len();
        let mut e = Encoder::new();
        e.put_u32(self.worker_id as u32);
        e.put_u64(self.n_local as u64);
        e.put_u32(p as u32);
        e.put_f64(self.theta_hat.rho);
        e.put_f64_slice(&self.theta_hat.beta);
        for i in 0..=p {
            for j in 0..=p {
                e.put_f64(self.hessian_at_opt[(i, j)]);
            }
        }
        e.put_f64(self.sigma2_eps_local);
        e.finish()
    }
}

#[cfg(test)]
mod tests;
