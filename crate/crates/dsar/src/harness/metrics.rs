//! Replication metrics: RMSE, relative efficiency, coverage.

use serde::Serialize;

use crate::lse::Theta;
use crate::stats;

/// Per-(method, parameter) metrics.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub method: String,
    pub parameter: String,
    pub mean_estimate: f64,
    /// Monte-Carlo standard error of the mean estimate.
    pub mc_se: f64,
    pub rmse: f64,
    /// RMSE(global) / RMSE(method); 1 means global efficiency.
    pub ree: f64,
    /// Empirical coverage of the nominal intervals; None when no inference ran.
    pub cp: Option<f64>,
}

/// Per-method bookkeeping.
#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub rounds: usize,
    pub mean_total_bytes: f64,
    pub mean_wall_time_s: f64,
}

/// Full metrics output of one experiment.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
    pub methods: Vec<MethodSummary>,
    pub replicates_used: usize,
    pub failures: Vec<String>,
    pub wall_time_s: f64,
}

impl MetricsTable {
    pub fn row(&self, method: &str, parameter: &str) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.parameter == parameter)
    }

    /// Per-method protocol summary CSV.
    pub fn methods_csv(&self) -> String {
        let mut out = String::from("method,rounds,mean_total_bytes,mean_wall_time_s\n");
        for m in &self.methods {
            out.push_str(&format!(
                "{},{},{:.1},{:.6}\n",
                m.method, m.rounds, m.mean_total_bytes, m.mean_wall_time_s
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,parameter,mean_estimate,mc_se,rmse,ree,cp\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.8},{:.8},{:.8},{:.6},{}\n",
                r.method,
                r.parameter,
                r.mean_estimate,
                r.mc_se,
                r.rmse,
                r.ree,
                r.cp.map_or(String::from(""), |c| format!("{c:.4}")),
            ));
        }
        out
    }
}

fn param_name(j: usize) -> String {
    if j == 0 {
        "rho".to_string()
    } else {
        format!("beta{j}")
    }
}

type ReplicateView<'a> = (
    &'a Vec<(String, Theta, Option<Vec<bool>>)>,
    &'a Vec<(String, usize, usize, f64)>,
);

/// Reduce per-replicate outcomes into the metrics table. Accumulation uses
/// pairwise summation in replicate order, so the result is independent of
/// both replicate completion order (rows are pre-sorted) and thread count.
pub(crate) fn build_table(
    outcomes: &[ReplicateView<'_>],
    theta0: &Theta,
    failures: Vec<String>,
    wall_time_s: f64,
) -> MetricsTable {
    let dim = theta0.dim();
    let truth = theta0.as_dvector();

    // Collect method names in first-seen order (global is always first).
    let mut method_names: Vec<String> = Vec::new();
    for (ests, _) in outcomes {
        for (name, _, _) in ests.iter() {
            if !method_names.iter().any(|m| m == name) {
                method_names.push(name.clone());
            }
        }
    }

    // Per method, per parameter: estimates and coverage hits across replicates.
    let mut rows = Vec::new();
    let mut rmse_global = vec![f64::NAN; dim];
    for name in &method_names {
        for j in 0..dim {
            let mut values = Vec::with_capacity(outcomes.len());
            let mut hits = Vec::new();
            for (ests, _) in outcomes {
                if let Some((_, theta, cover)) = ests.iter().find(|(m, _, _)| m == name) {
                    values.push(theta.as_dvector()[j]);
                    if let Some(cover) = cover {
                        hits.push(if cover[j] { 1.0 } else { 0.0 });
                    }
                }
            }
            let sq_err: Vec<f64> = values.iter().map(|v| (v - truth[j]) * (v - truth[j])).collect();
            let rmse = (stats::pairwise_sum(&sq_err) / sq_err.len() as f64).sqrt();
            if name == "global" {
                rmse_global[j] = rmse;
            }
            let (mean, mc_se) = {
                let m = stats::mean(&values);
                let se = (stats::sample_variance(&values) / values.len() as f64).sqrt();
                (m, se)
            };
            rows.push(MetricsRow {
                method: name.clone(),
                parameter: param_name(j),
                mean_estimate: mean,
                mc_se,
                rmse,
                ree: f64::NAN, // filled below once the global row exists
                cp: if hits.is_empty() {
                    None
                } else {
                    Some(stats::mean(&hits))
                },
            });
        }
    }
    for row in &mut rows {
        let j = if row.parameter == "rho" {
            0
        } else {
            row.parameter[4..].parse::<usize>().unwrap()
        };
        row.ree = rmse_global[j] / row.rmse;
    }

    // Mean bytes, rounds and wall time per method.
    let mut methods = Vec::new();
    for name in &method_names {
        if name == "global" {
            continue;
        }
        let mut bytes = Vec::new();
        let mut times = Vec::new();
        let mut rounds = 0usize;
        for (_, reps) in outcomes {
            if let Some((_, b, r, t)) = reps.iter().find(|(m, _, _, _)| m == name) {
                bytes.push(*b as f64);
                times.push(*t);
                rounds = *r;
            }
        }
        if !bytes.is_empty() {
            methods.push(MethodSummary {
                method: name.clone(),
                rounds,
                mean_total_bytes: stats::mean(&bytes),
                mean_wall_time_s: stats::mean(&times),
            });
        }
    }

    MetricsTable {
        rows,
        methods,
        replicates_used: outcomes.len(),
        failures,
        wall_time_s,
    }
}
