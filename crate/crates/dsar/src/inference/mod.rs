//! Distributed covariance estimation and confidence intervals.
//!
//! The aggregated estimators are asymptotically normal with sandwich
//! covariance Sigma2^{-1} Sigma1 Sigma2^{-1}. Sigma2 is the pooled objective
//! curvature (cheap to transmit); Sigma1 is the pooled score covariance and
//! is estimated from per-worker factor matrices, either exactly (desk scale)
//! or through random-projection sketches whose d x d payloads replace the
//! N x N originals.

mod factors;
mod projection;

pub use factors::{build_factors, sigma1_exact, CrossBlockSign, WorkerFactors};
pub use projection::{
    build_pack, make_projectors, pack_plugins, sigma1_projected, InferencePack, Projector,
    ProjectorKind,
};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lse::Theta;
use crate::mat::RowMatrix;
use crate::network::SparseNetwork;
use crate::stats;

/// Scalar variance plug-ins entering the score covariance estimate.
///
/// `sigma2_eps_hat` estimates the noise variance via the mean squared
/// structural residual ||S y - X beta||^2 / N; `sigma2_tilde_hat` adds the
/// explained second moment beta' (X'X / N) beta, the sample analogue of
/// beta' Sigma_X beta + sigma_eps^2 for centered covariates.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct VariancePlugins {
    pub sigma2_eps_hat: f64,
    pub sigma2_tilde_hat: f64,
}

/// Global plug-in estimates at a fitted theta.
pub fn estimate_plugins(
    theta: &Theta,
    net: &SparseNetwork,
    y: &[f64],
    x: &RowMatrix,
) -> VariancePlugins {
    let n = net.n_nodes();
    let mut wy = vec![0.0f64; n];
    net.weights().mul_vec(y, &mut wy);
    let mut rss = 0.0;
    let mut explained = 0.0;
    for i in 0..n {
        let xb: f64 = x
            .row(i)
            .iter()
            .zip(&theta.beta)
            .map(|(a, b)| a * b)
            .sum();
        let r = y[i] - theta.rho * wy[i] - xb;
        rss += r * r;
        explained += xb * xb;
    }
    let sigma2_eps_hat = rss / n as f64;
    VariancePlugins {
        sigma2_eps_hat,
        sigma2_tilde_hat: sigma2_eps_hat + explained / n as f64,
    }
}

/// Pool per-worker plug-in parts with alpha_k weights; exactly reproduces the
/// global estimate because alpha_k / N_k = 1 / N.
pub fn pool_plugins(parts: &[(f64, f64)], alphas: &[f64]) -> VariancePlugins {
    let mut eps = 0.0;
    let mut explained = 0.0;
    for (&(e, g), &a) in parts.iter().zip(alphas) {
        eps += a * e;
        explained += a * g;
    }
    VariancePlugins {
        sigma2_eps_hat: eps,
        sigma2_tilde_hat: eps + explained,
    }
}

/// How Sigma1 was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CovarianceMode {
    Exact,
    Projected,
}

/// Sandwich covariance of the aggregated estimator.
#[derive(Debug, Clone)]
pub struct SandwichCovariance {
    pub sigma1_hat: DMatrix<f64>,
    pub sigma2_hat: DMatrix<f64>,
    /// Sigma2^{-1} Sigma1 Sigma2^{-1} / N.
    pub covariance: DMatrix<f64>,
    pub mode: CovarianceMode,
    pub proj_dim: Option<usize>,
}

/// Assemble the sandwich covariance. Sigma1 is symmetrized first; a negative
/// diagonal entry (possible under projection with too small d) is an error
/// rather than being masked.
pub fn sandwich(
    sigma1: &DMatrix<f64>,
    sigma2: &DMatrix<f64>,
    n_nodes: usize,
    mode: CovarianceMode,
    proj_dim: Option<usize>,
) -> Result<SandwichCovariance> {
    let dim = sigma1.nrows();
    if sigma2.nrows() != dim || sigma1.ncols() != dim || sigma2.ncols() != dim {
        return Err(Error::Dimension(format!(
            "sigma1 is {}x{}, sigma2 is {}x{}",
            sigma1.nrows(),
            sigma1.ncols(),
            sigma2.nrows(),
            sigma2.ncols()
        )));
    }
    let sym = (sigma1 + sigma1.transpose()) * 0.5;
    let inv = sigma2
        .clone()
        .try_inverse()
        .ok_or(Error::SingularHessian {
            context: "pooled curvature in the sandwich covariance",
            worker: None,
        })?;
    let covariance = &inv * &sym * &inv / n_nodes as f64;
    for i in 0..dim {
        if covariance[(i, i)] < 0.0 {
            return Err(Error::NegativeVariance {
                index: i,
                value: covariance[(i, i)],
                proj_dim: proj_dim.unwrap_or(0),
            });
        }
    }
    Ok(SandwichCovariance {
        sigma1_hat: sym,
        sigma2_hat: sigma2.clone(),
        covariance,
        mode,
        proj_dim,
    })
}

/// One parameter's interval and test.
#[derive(Debug, Clone, Serialize)]
pub struct ConfidenceInterval {
    pub parameter: String,
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    pub p_value: f64,
}

/// Per-parameter normal-theory intervals at the given level.
pub fn confidence_intervals(
    theta: &Theta,
    cov: &SandwichCovariance,
    level: f64,
) -> Result<Vec<ConfidenceInterval>> {
    if !(0.0..1.0).contains(&level) || level == 0.0 {
        // level -> 0 degenerates to the point estimate; honor it literally.
        if level == 0.0 {
            return Ok(build_intervals(theta, cov, 0.0));
        }
        return Err(Error::InvalidConfig(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let z = stats::normal_quantile(0.5 + level / 2.0);
    Ok(build_intervals(theta, cov, z))
}

fn build_intervals(theta: &Theta, cov: &SandwichCovariance, z: f64) -> Vec<ConfidenceInterval> {
    let est = theta.as_dvector();
    let mut out = Vec::with_capacity(est.len());
    for j in 0..est.len() {
        let name = if j == 0 {
            "rho".to_string()
        } else {
            format!("beta{j}")
        };
        let se = cov.covariance[(j, j)].max(0.0).sqrt();
        let stat = if se > 0.0 { est[j] / se } else { f64::INFINITY };
        out.push(ConfidenceInterval {
            parameter: name,
            estimate: est[j],
            se,
            lower: est[j] - z * se,
            upper: est[j] + z * se,
            p_value: stats::two_sided_p_value(stat),
        });
    }
    out
}

#[cfg(test)]
mod tests;
