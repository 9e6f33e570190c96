//! Simulated master-worker cluster: aggregation rules and message accounting.
//!
//! The cluster is in-process; payloads are still serialized canonically so
//! the communication cost of every protocol round is measurable in bytes,
//! platform-independently. Broadcasts count once per worker (star topology).

mod pipeline;

pub use pipeline::{
    build_all_shards, run_on_shards, run_pipeline, run_twlse, InferenceOutput, InferenceSettings,
    PipelineOptions, PipelineResult,
};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lse::{LocalSummary, Theta};
use crate::wire::Encoder;

/// Estimation method executed by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    /// Plain average of local estimates; one round.
    Os,
    /// Curvature-weighted combination; one round.
    Wlse,
    /// Weighted combination plus one broadcast Newton refinement; two rounds.
    Twlse,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Os => "os",
            Method::Wlse => "wlse",
            Method::Twlse => "twlse",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "os" => Ok(Method::Os),
            "wlse" => Ok(Method::Wlse),
            "twlse" => Ok(Method::Twlse),
            other => Err(Error::InvalidConfig(format!(
                "unknown method `{other}` (expected os|wlse|twlse)"
            ))),
        }
    }
}

/// Message endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Role {
    Master,
    Worker(usize),
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Role::Master => write!(f, "master"),
            Role::Worker(k) => write!(f, "worker{k}"),
        }
    }
}

/// Payload kind carried by a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PayloadKind {
    LocalSummary,
    BroadcastTheta,
    InferencePack,
}

impl PayloadKind {
    pub fn name(&self) -> &'static str {
        match self {
            PayloadKind::LocalSummary => "local_summary",
            PayloadKind::BroadcastTheta => "broadcast_theta",
            PayloadKind::InferencePack => "inference_pack",
        }
    }
}

/// One logged transfer.
#[derive(Debug, Clone, Serialize)]
pub struct Message {
    pub round: usize,
    pub from: Role,
    pub to: Role,
    pub kind: PayloadKind,
    pub payload_bytes: usize,
}

/// Canonical encoding of a broadcast parameter vector.
pub fn encode_theta(theta: &Theta) -> Vec<u8> {
    let mut e = Encoder::new();
    e.put_u32(theta.beta.len() as u32);
    e.put_f64(theta.rho);
    e.put_f64_slice(&theta.beta);
    e.finish()
}

/// Master-side combined estimate.
#[derive(Debug, Clone)]
pub struct AggregateEstimate {
    pub method: Method,
    pub theta: Theta,
    /// Pooled curvature sum_k alpha_k ddotQ_k; absent for the one-shot rule.
    pub sigma2_hat: Option<DMatrix<f64>>,
    pub rounds_used: usize,
    pub total_bytes: usize,
}

/// Unweighted mean of the local estimates.
pub fn aggregate_os(summaries: &[LocalSummary]) -> Result<AggregateEstimate> {
    if summaries.is_empty() {
        return Err(Error::Aggregation("no local summaries".into()));
    }
    let dim = summaries[0].theta_hat.dim();
    let mut acc = DVector::<f64>::zeros(dim);
    for s in summaries {
        acc += s.theta_hat.as_dvector();
    }
    acc /= summaries.len() as f64;
    Ok(AggregateEstimate {
        method: Method::Os,
        theta: Theta::from_dvector(&acc),
        sigma2_hat: None,
        rounds_used: 1,
        total_bytes: summaries.iter().map(|s| s.byte_size).sum(),
    })
}

/// Curvature-weighted combination
/// theta_w = (sum_k alpha_k H_k)^{-1} (sum_k alpha_k H_k theta_k).
pub fn aggregate_wlse(summaries: &[LocalSummary], alphas: &[f64]) -> Result<AggregateEstimate> {
    if summaries.is_empty() {
        return Err(Error::Aggregation("no local summaries".into()));
    }
    if summaries.len() != alphas.len() {
        return Err(Error::Dimension(format!(
            "{} summaries vs {} weights",
            summaries.len(),
            alphas.len()
        )));
    }
    let alpha_sum: f64 = alphas.iter().sum();
    if (alpha_sum - 1.0).abs() > 1e-8 {
        return Err(Error::Aggregation(format!(
            "alpha weights sum to {alpha_sum}, expected 1"
        )));
    }
    let dim = summaries[0].theta_hat.dim();
    let mut pooled = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for (s, &a) in summaries.iter().zip(alphas) {
        pooled += &s.hessian_at_opt * a;
        rhs += (&s.hessian_at_opt * s.theta_hat.as_dvector()) * a;
    }
    let theta = pooled.clone().lu().solve(&rhs).ok_or(Error::SingularHessian {
        context: "pooled curvature in the weighted combination",
        worker: None,
    })?;
    Ok(AggregateEstimate {
        method: Method::Wlse,
        theta: Theta::from_dvector(&theta),
        sigma2_hat: Some(pooled),
        rounds_used: 1,
        total_bytes: summaries.iter().map(|s| s.byte_size).sum(),
    })
}

/// Combine refreshed round-2 summaries (theta_k^(2), ddotQ_k at the broadcast
/// point) into the two-step estimate, reusing the weighted-combination rule.
pub fn combine_twlse(
    refined: &[LocalSummary],
    alphas: &[f64],
    first_pass: &AggregateEstimate,
) -> Result<AggregateEstimate> {
    if first_pass.method != Method::Wlse {
        return Err(Error::Aggregation(
            "two-step refinement requires a weighted first pass".into(),
        ));
    }
    let combined = aggregate_wlse(refined, alphas)?;
    Ok(AggregateEstimate {
        method: Method::Twlse,
        theta: combined.theta,
        sigma2_hat: combined.sigma2_hat,
        rounds_used: 2,
        total_bytes: 0, // accounted by the pipeline across both rounds
    })
}

/// Export a message log as CSV (round, from, to, kind, bytes).
pub fn messages_to_csv(messages: &[Message]) -> String {
    let mut out = String::from("round,from,to,kind,bytes\n");
    for m in messages {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            m.round,
            m.from,
            m.to,
            m.kind.name(),
            m.payload_bytes
        ));
    }
    out
}

#[cfg(test)]
mod tests;
