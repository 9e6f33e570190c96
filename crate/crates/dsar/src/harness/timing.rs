//! Wall-clock comparison of the estimators over a sweep of network sizes.

use std::time::Instant;

use serde::Serialize;

use crate::cluster::{run_on_shards, Method, PipelineOptions};
use crate::error::Result;
use crate::network::partition_uniform;
use crate::synth;

#[derive(Debug, Clone, Serialize)]
pub struct TimingRow {
    pub n_nodes: usize,
    pub method: String,
    pub seconds: f64,
}

/// Time global/OS/WLSE/TWLSE on fresh synthetic data for each N at fixed K.
/// Shard construction is shared; reported times cover the protocol itself.
pub fn timing_report(
    network_template: &synth::NetworkSpec,
    model: &synth::TrueModel,
    n_sweep: &[usize],
    k_workers: usize,
    seed: u64,
) -> Result<Vec<TimingRow>> {
    let mut rows = Vec::new();
    for &n in n_sweep {
        let mut spec = network_template.clone();
        spec.n_nodes = n;
        let (net, x, y) = synth::gen_dataset(&spec, model, model.beta0.len(), seed)?;

        // Global = K = 1 pipeline.
        let global_part = partition_uniform(n, 1, seed)?;
        let global_shards = crate::cluster::build_all_shards(&net, &global_part, &y, &x)?;
        let start = Instant::now();
        run_on_shards(
            &global_shards,
            &global_part.alphas(),
            &PipelineOptions::estimate_only(Method::Wlse),
        )?;
        rows.push(TimingRow {
            n_nodes: n,
            method: "global".into(),
            seconds: start.elapsed().as_secs_f64(),
        });

        let part = partition_uniform(n, k_workers, seed)?;
        let shards = crate::cluster::build_all_shards(&net, &part, &y, &x)?;
        for method in [Method::Os, Method::Wlse, Method::Twlse] {
            let start = Instant::now();
            run_on_shards(&shards, &part.alphas(), &PipelineOptions::estimate_only(method))?;
            rows.push(TimingRow {
                n_nodes: n,
                method: method.name().into(),
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(rows)
}

pub fn timing_csv(rows: &[TimingRow]) -> String {
    let mut out = String::from("n_nodes,method,seconds\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.6}\n", r.n_nodes, r.method, r.seconds));
    }
    out
}
