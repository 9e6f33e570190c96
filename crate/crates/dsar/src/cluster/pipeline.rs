//! End-to-end protocol execution on the simulated cluster.
//!
//! Rounds:
//!   1. every worker fits its shard and ships (theta_k, ddotQ_k);
//!   2. (two-step and/or inference) the master broadcasts the weighted
//!      estimate; workers reply with a one-step refinement and, if enabled,
//!      an inference payload (projected pack or exact factors).
//!
//! Workers run in parallel; the master reduces sequentially in worker order,
//! so results and byte counts are bit-identical across thread counts.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::{
    build_factors, build_pack, confidence_intervals, make_projectors, pack_plugins, pool_plugins,
    sandwich, sigma1_exact, sigma1_projected, ConfidenceInterval, CovarianceMode, CrossBlockSign,
    InferencePack, Projector, SandwichCovariance, VariancePlugins, WorkerFactors,
};
use crate::lse::{
    eval_objective, fit_local, one_newton_step, sigma2_eps_local, LocalSummary, SolverOptions,
};
use crate::network::{build_shard, Partition, SparseNetwork, WorkerShard};

use super::{
    aggregate_os, aggregate_wlse, combine_twlse, encode_theta, AggregateEstimate, Message, Method,
    PayloadKind, Role,
};

/// Inference mode requested from the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InferenceSettings {
    None,
    /// Transmit full factor matrices; master pools them exactly. Desk scale.
    Exact { level: f64 },
    /// Random-projection packs with dimension d; `sparse` selects the
    /// Achlioptas projector entries.
    Projected {
        d: usize,
        seed: u64,
        sparse: bool,
        level: f64,
    },
}

impl InferenceSettings {
    pub fn enabled(&self) -> bool {
        !matches!(self, InferenceSettings::None)
    }

    /// Default projection dimension floor(log N) + 1.
    pub fn default_proj_dim(n_nodes: usize) -> usize {
        (n_nodes.max(2) as f64).ln().floor() as usize + 1
    }
}

/// Pipeline controls.
#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub method: Method,
    pub solver: SolverOptions,
    pub inference: InferenceSettings,
    /// Sign convention of the rho-beta cross block of Sigma1.
    pub cross_sign: CrossBlockSign,
}

impl PipelineOptions {
    pub fn estimate_only(method: Method) -> Self {
        PipelineOptions {
            method,
            solver: SolverOptions::default(),
            inference: InferenceSettings::None,
            cross_sign: CrossBlockSign::default(),
        }
    }
}

/// Inference outputs of a pipeline run.
#[derive(Debug, Clone)]
pub struct InferenceOutput {
    pub plugins: VariancePlugins,
    pub covariance: SandwichCovariance,
    pub intervals: Vec<ConfidenceInterval>,
}

/// Full pipeline result: estimate, optional inference, message log.
#[derive(Debug)]
pub struct PipelineResult {
    pub estimate: AggregateEstimate,
    pub inference: Option<InferenceOutput>,
    pub messages: Vec<Message>,
    pub summaries: Vec<LocalSummary>,
}

impl PipelineResult {
    /// Sum of every logged payload.
    pub fn total_message_bytes(&self) -> usize {
        self.messages.iter().map(|m| m.payload_bytes).sum()
    }

    /// Bytes of inference payloads only.
    pub fn inference_bytes(&self) -> usize {
        self.messages
            .iter()
            .filter(|m| m.kind == PayloadKind::InferencePack)
            .map(|m| m.payload_bytes)
            .sum()
    }
}

/// Build all shards of a partition in parallel.
pub fn build_all_shards(
    net: &SparseNetwork,
    part: &Partition,
    y: &[f64],
    x: &crate::mat::RowMatrix,
) -> Result<Vec<WorkerShard>> {
    (0..part.k_workers())
        .into_par_iter()
        .map(|k| build_shard(net, part, y, x, k))
        .collect()
}

/// Execute the configured protocol on a dataset and partition.
pub fn run_pipeline(
    net: &SparseNetwork,
    y: &[f64],
    x: &crate::mat::RowMatrix,
    part: &Partition,
    opts: &PipelineOptions,
) -> Result<PipelineResult> {
    let shards = build_all_shards(net, part, y, x)?;
    run_on_shards(&shards, &part.alphas(), opts)
}

/// Execute the protocol on prebuilt shards.
pub fn run_on_shards(
    shards: &[WorkerShard],
    alphas: &[f64],
    opts: &PipelineOptions,
) -> Result<PipelineResult> {
    if shards.is_empty() {
        return Err(Error::Aggregation("no shards supplied".into()));
    }
    if opts.method == Method::Os && opts.inference.enabled() {
        return Err(Error::InvalidConfig(
            "inference is unavailable for the one-shot estimator (no curvature is transmitted)"
                .into(),
        ));
    }
    let n_total = shards[0].n_total();
    let mut messages = Vec::new();

    // Round 1: local fits.
    let summaries: Vec<LocalSummary> = shards
        .par_iter()
        .map(|shard| {
            fit_local(shard, None, &opts.solver)
                .map(|(s, _)| s)
                .map_err(|e| Error::WorkerFailure {
                    worker: shard.worker_id(),
                    stage: "local fit",
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    for s in &summaries {
        messages.push(Message {
            round: 1,
            from: Role::Worker(s.worker_id),
            to: Role::Master,
            kind: PayloadKind::LocalSummary,
            payload_bytes: s.byte_size,
        });
    }

    // Master reduction.
    let first_pass = match opts.method {
        Method::Os => aggregate_os(&summaries)?,
        Method::Wlse | Method::Twlse => aggregate_wlse(&summaries, alphas)?,
    };

    let needs_round2 = opts.method == Method::Twlse || opts.inference.enabled();
    if !needs_round2 {
        return Ok(PipelineResult {
            estimate: first_pass,
            inference: None,
            messages,
            summaries,
        });
    }

    // Round 2: broadcast the weighted estimate.
    let broadcast = first_pass.theta.clone();
    let broadcast_bytes = encode_theta(&broadcast).len();
    for k in 0..shards.len() {
        messages.push(Message {
            round: 2,
            from: Role::Master,
            to: Role::Worker(k),
            kind: PayloadKind::BroadcastTheta,
            payload_bytes: broadcast_bytes,
        });
    }

    // Workers: refinement and/or inference payloads.
    struct Round2 {
        refined: Option<LocalSummary>,
        factors: Option<WorkerFactors>,
        pack: Option<InferencePack>,
    }
    let projectors: Option<(Projector, Projector)> = match opts.inference {
        InferenceSettings::Projected {
            d, seed, sparse, ..
        } => Some(make_projectors(n_total, d, seed, sparse)),
        _ => None,
    };
    let want_refine = opts.method == Method::Twlse;
    let want_infer = opts.inference.enabled();
    let round2: Vec<Round2> = shards
        .par_iter()
        .map(|shard| -> Result<Round2> {
            let wrap = |e: Error, stage: &'static str| Error::WorkerFailure {
                worker: shard.worker_id(),
                stage,
                source: Box::new(e),
            };
            let refined = if want_refine {
                let theta2 = one_newton_step(shard, &broadcast)
                    .map_err(|e| wrap(e, "one-step refinement"))?;
                let eval = eval_objective(shard, &broadcast, 2)
                    .map_err(|e| wrap(e, "curvature at the broadcast point"))?;
                Some(LocalSummary::new(
                    shard.worker_id(),
                    theta2.clone(),
                    eval.hessian.unwrap(),
                    shard.n_local(),
                    sigma2_eps_local(shard, &theta2),
                ))
            } else {
                None
            };
            let (factors, pack) = if want_infer {
                let f = build_factors(shard, &broadcast)
                    .map_err(|e| wrap(e, "inference factors"))?;
                match &projectors {
                    Some((r1, r2)) => {
                        let pack = build_pack(&f, r1, r2).map_err(|e| wrap(e, "projection"))?;
                        (None, Some(pack))
                    }
                    None => (Some(f), None),
                }
            } else {
                (None, None)
            };
            Ok(Round2 {
                refined,
                factors,
                pack,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut refined = Vec::new();
    let mut packs = Vec::new();
    let mut factor_sets = Vec::new();
    for (k, r2) in round2.into_iter().enumerate() {
        if let Some(s) = r2.refined {
            messages.push(Message {
                round: 2,
                from: Role::Worker(k),
                to: Role::Master,
                kind: PayloadKind::LocalSummary,
                payload_bytes: s.byte_size,
            });
            refined.push(s);
        }
        if let Some(p) = r2.pack {
            messages.push(Message {
                round: 2,
                from: Role::Worker(k),
                to: Role::Master,
                kind: PayloadKind::InferencePack,
                payload_bytes: p.byte_size,
            });
            packs.push(p);
        }
        if let Some(f) = r2.factors {
            messages.push(Message {
                round: 2,
                from: Role::Worker(k),
                to: Role::Master,
                kind: PayloadKind::InferencePack,
                payload_bytes: f.encode().len(),
            });
            factor_sets.push(f);
        }
    }

    // Final estimate.
    let estimate = if want_refine {
        let mut est = combine_twlse(&refined, alphas, &first_pass)?;
        est.total_bytes = summaries.iter().map(|s| s.byte_size).sum::<usize>()
            + broadcast_bytes * shards.len()
            + refined.iter().map(|s| s.byte_size).sum::<usize>();
        est
    } else {
        first_pass
    };

    // Master-side inference assembly.
    let inference = if want_infer {
        let sigma2 = estimate
            .sigma2_hat
            .clone()
            .ok_or(Error::Aggregation("missing pooled curvature".into()))?;
        let (sigma1, plugins, mode, proj_dim, level) = match opts.inference {
            InferenceSettings::Projected { d, level, .. } => {
                let plugins = pack_plugins(&packs, alphas);
                let sigma1 = sigma1_projected(&packs, alphas, &plugins, opts.cross_sign)?;
                (sigma1, plugins, CovarianceMode::Projected, Some(d), level)
            }
            InferenceSettings::Exact { level } => {
                let parts: Vec<(f64, f64)> = factor_sets
                    .iter()
                    .map(|f| (f.sigma2_eps_part, f.gram_quad_part))
                    .collect();
                let plugins = pool_plugins(&parts, alphas);
                let sigma1 = sigma1_exact(&factor_sets, alphas, &plugins, opts.cross_sign)?;
                (sigma1, plugins, CovarianceMode::Exact, None, level)
            }
            InferenceSettings::None => unreachable!(),
        };
        let cov = sandwich(&sigma1, &sigma2, n_total, mode, proj_dim)?;
        let intervals = confidence_intervals(&estimate.theta, &cov, level)?;
        Some(InferenceOutput {
            plugins,
            covariance: cov,
            intervals,
        })
    } else {
        None
    };

    Ok(PipelineResult {
        estimate,
        inference,
        messages,
        summaries,
    })
}

/// Standalone two-step refinement given a completed weighted first pass.
/// Returns the refined estimate and the round-2 message log.
pub fn run_twlse(
    shards: &[WorkerShard],
    alphas: &[f64],
    first_pass: &AggregateEstimate,
) -> Result<(AggregateEstimate, Vec<Message>)> {
    if first_pass.method != Method::Wlse {
        return Err(Error::Aggregation(
            "two-step refinement requires a weighted first pass".into(),
        ));
    }
    let broadcast = &first_pass.theta;
    let broadcast_bytes = encode_theta(broadcast).len();
    let mut messages = Vec::new();
    for k in 0..shards.len() {
        messages.push(Message {
            round: 2,
            from: Role::Master,
            to: Role::Worker(k),
            kind: PayloadKind::BroadcastTheta,
            payload_bytes: broadcast_bytes,
        });
    }
    let refined: Vec<LocalSummary> = shards
        .par_iter()
        .map(|shard| -> Result<LocalSummary> {
            let theta2 = one_newton_step(shard, broadcast).map_err(|e| Error::WorkerFailure {
                worker: shard.worker_id(),
                stage: "one-step refinement",
                source: Box::new(e),
            })?;
            let eval = eval_objective(shard, broadcast, 2)?;
            Ok(LocalSummary::new(
                shard.worker_id(),
                theta2.clone(),
                eval.hessian.unwrap(),
                shard.n_local(),
                sigma2_eps_local(shard, &theta2),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    for s in &refined {
        messages.push(Message {
            round: 2,
            from: Role::Worker(s.worker_id),
            to: Role::Master,
            kind: PayloadKind::LocalSummary,
            payload_bytes: s.byte_size,
        });
    }
    let mut est = combine_twlse(&refined, alphas, first_pass)?;
    est.total_bytes = first_pass.total_bytes
        + broadcast_bytes * shards.len()
        + refined.iter().map(|s| s.byte_size).sum::<usize>();
    Ok((est, messages))
}
