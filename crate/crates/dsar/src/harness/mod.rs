//! Experiment harness: replication loops, metrics, real-data runs, reports.

mod config;
mod metrics;
mod realdata;
mod timing;

pub use config::{
    disjoint_pairs, heteroscedastic_grid, ExperimentConfig, InferenceConfig,
    InferenceModeConfig,
};
pub use metrics::{MethodSummary, MetricsRow, MetricsTable};
pub use realdata::{estimate_real, export_dataset_csv, RealDataOptions, RealDataOutput};
pub use timing::{timing_csv, timing_report, TimingRow};

use rayon::prelude::*;

use crate::cluster::{
    build_all_shards, run_on_shards, AggregateEstimate, Method, PipelineOptions, PipelineResult,
};
use crate::error::{Error, Result};
use crate::lse::Theta;
use crate::mat::RowMatrix;
use crate::network::{partition_uniform, Partition, SparseNetwork};
use crate::rng;
use crate::stats;
use crate::synth;

/// Global estimator: the K = 1 pipeline; REE denominators come from here.
pub fn fit_global(
    net: &SparseNetwork,
    y: &[f64],
    x: &RowMatrix,
    opts: &PipelineOptions,
) -> Result<PipelineResult> {
    let part = partition_uniform(net.n_nodes(), 1, 0)?;
    let shards = build_all_shards(net, &part, y, x)?;
    run_on_shards(&shards, &part.alphas(), opts)
}

/// Everything recorded about one replicate.
#[derive(Debug)]
struct ReplicateOutcome {
    /// (method name, estimate, per-parameter CI coverage of theta0).
    estimates: Vec<(String, Theta, Option<Vec<bool>>)>,
    /// Per method: total payload bytes, protocol rounds, wall seconds.
    method_stats: Vec<(String, usize, usize, f64)>,
}

/// Run the replication experiment described by the config.
///
/// Replicate r draws its own data from seed streams derived from
/// (base_seed, r); methods share the data and the partition within a
/// replicate. Replicates run in parallel and are reduced in index order, so
/// results are independent of thread scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsTable> {
    config.validate()?;
    let replicates = config.replicates;
    let theta0 = Theta::new(config.model.rho0, config.model.beta0.clone());
    let start = std::time::Instant::now();

    let outcomes: Vec<std::result::Result<ReplicateOutcome, String>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            run_replicate(config, r as u64, &theta0).map_err(|e| format!("replicate {r}: {e}"))
        })
        .collect();

    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(o) => ok.push(o),
            Err(e) => {
                if config.fail_fast {
                    return Err(Error::Aggregation(e));
                }
                failures.push(e);
            }
        }
    }
    if ok.is_empty() {
        return Err(Error::Aggregation(format!(
            "all {replicates} replicates failed; first failure: {}",
            failures.first().cloned().unwrap_or_default()
        )));
    }

    Ok(metrics::build_table(
        &ok.iter()
            .map(|o| (&o.estimates, &o.method_stats))
            .collect::<Vec<_>>(),
        &theta0,
        failures,
        start.elapsed().as_secs_f64(),
    ))
}

fn run_replicate(
    config: &ExperimentConfig,
    r: u64,
    theta0: &Theta,
) -> Result<ReplicateOutcome> {
    let seed = rng::derive_key(config.base_seed, &[r]);
    let net = synth::gen_network(&config.network, seed)?;
    let x = synth::gen_covariates(config.network.n_nodes, config.model.beta0.len(), seed);
    let eps = synth::gen_noise(&config.model.noise, config.network.n_nodes, seed)?;
    let y = synth::synth_response(&net, &x, &config.model, &eps)?;
    let part = partition_uniform(net.n_nodes(), config.k_workers, seed)?;

    let mut estimates = Vec::new();
    let mut method_stats = Vec::new();

    // Global fit (REE denominator).
    let global_opts = PipelineOptions {
        method: Method::Wlse,
        solver: config.solver,
        inference: crate::cluster::InferenceSettings::None,
        cross_sign: config.cross_sign,
    };
    let global = fit_global(&net, &y, &x, &global_opts)?;
    estimates.push(("global".to_string(), global.estimate.theta.clone(), None));

    // Distributed methods share shards.
    let shards = build_all_shards(&net, &part, &y, &x)?;
    let alphas = part.alphas();
    for &method in &config.methods {
        let opts = PipelineOptions {
            method,
            solver: config.solver,
            inference: config.inference.settings(method, net.n_nodes(), seed),
            cross_sign: config.cross_sign,
        };
        let method_start = std::time::Instant::now();
        let result = run_on_shards(&shards, &alphas, &opts)?;
        let method_secs = method_start.elapsed().as_secs_f64();
        let hits = result.inference.as_ref().map(|inf| {
            inf.intervals
                .iter()
                .zip(theta0.as_dvector().iter())
                .map(|(ci, &truth)| ci.lower <= truth && truth <= ci.upper)
                .collect::<Vec<bool>>()
        });
        method_stats.push((
            method.name().to_string(),
            result.total_message_bytes(),
            result.estimate.rounds_used,
            method_secs,
        ));
        estimates.push((method.name().to_string(), result.estimate.theta, hits));
    }

    Ok(ReplicateOutcome {
        estimates,
        method_stats,
    })
}

/// Convenience wrapper returning only the aggregated estimate of one method
/// on a fixed dataset (used by the CLI fit path).
pub fn fit_once(
    net: &SparseNetwork,
    y: &[f64],
    x: &RowMatrix,
    part: &Partition,
    opts: &PipelineOptions,
) -> Result<(AggregateEstimate, PipelineResult)> {
    let shards = build_all_shards(net, part, y, x)?;
    let result = run_on_shards(&shards, &part.alphas(), opts)?;
    Ok((result.estimate.clone(), result))
}

/// Run metadata echoed next to result tables.
#[derive(Debug, serde::Serialize)]
pub struct RunMetadata {
    pub config: serde_json::Value,
    pub base_seed: u64,
    pub replicates: usize,
    pub git_hash: String,
    pub started_unix: u64,
}

impl RunMetadata {
    pub fn collect(config: &ExperimentConfig) -> Self {
        RunMetadata {
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            base_seed: config.base_seed,
            replicates: config.replicates,
            git_hash: git_hash(),
            started_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

fn git_hash() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

/// Mean and Monte-Carlo standard error of a parameter across replicates.
pub fn mc_mean_se(values: &[f64]) -> (f64, f64) {
    let mean = stats::mean(values);
    let se = (stats::sample_variance(values) / values.len() as f64).sqrt();
    (mean, se)
}
