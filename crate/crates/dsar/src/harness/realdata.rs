//! Real-data ingestion: edge list plus covariate CSV.
//!
//! The covariate file is a header CSV with a node-id column, a named response
//! column, and any number of numeric covariate columns. Ids must match the
//! edge list; every network node needs exactly one covariate row.

use std::io::Write;
use std::path::Path;

use crate::cluster::{PipelineOptions, PipelineResult};
use crate::error::{Error, Result};
use crate::mat::RowMatrix;
use crate::network::{partition_uniform, read_edge_list, row_normalize, IdRemap, SparseNetwork};
use crate::stats;

/// Options for a real-data estimation run.
#[derive(Debug, Clone)]
pub struct RealDataOptions {
    /// Name of the node-id column (default "node_id").
    pub id_column: String,
    /// Name of the response column.
    pub response_column: String,
    /// Standardize response and covariates to zero mean, unit variance.
    pub standardize: bool,
    pub k_workers: usize,
    pub partition_seed: u64,
    pub pipeline: PipelineOptions,
}

/// Result of a real-data run.
#[derive(Debug)]
pub struct RealDataOutput {
    pub result: PipelineResult,
    pub remap: IdRemap,
    pub n_nodes: usize,
    pub p: usize,
    pub covariate_names: Vec<String>,
}

impl RealDataOutput {
    /// Inference CSV: parameter, estimate, SE, CI bounds, p-value.
    pub fn inference_csv(&self) -> String {
        let mut out = String::from("parameter,estimate,se,ci_low,ci_high,p_value\n");
        if let Some(inf) = &self.result.inference {
            for ci in &inf.intervals {
                out.push_str(&format!(
                    "{},{:.8},{:.8},{:.8},{:.8},{:.3e}\n",
                    ci.parameter, ci.estimate, ci.se, ci.lower, ci.upper, ci.p_value
                ));
            }
        } else {
            let est = self.result.estimate.theta.as_dvector();
            for (j, v) in est.iter().enumerate() {
                let name = if j == 0 {
                    "rho".to_string()
                } else {
                    format!("beta{j}")
                };
                out.push_str(&format!("{name},{v:.8},,,,\n"));
            }
        }
        out
    }
}

/// Parse the covariate CSV into (y, X) aligned with the remapped node ids.
fn read_covariates(
    path: &Path,
    remap: &IdRemap,
    n_nodes: usize,
    id_column: &str,
    response_column: &str,
) -> Result<(Vec<f64>, RowMatrix, Vec<String>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Data("covariate file is empty".into()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let id_idx = columns
        .iter()
        .position(|c| *c == id_column)
        .ok_or_else(|| Error::Data(format!("missing id column `{id_column}`")))?;
    let y_idx = columns
        .iter()
        .position(|c| *c == response_column)
        .ok_or_else(|| Error::Data(format!("missing response column `{response_column}`")))?;
    let x_idx: Vec<usize> = (0..columns.len())
        .filter(|&i| i != id_idx && i != y_idx)
        .collect();
    if x_idx.is_empty() {
        return Err(Error::Data("no covariate columns".into()));
    }
    let names: Vec<String> = x_idx.iter().map(|&i| columns[i].to_string()).collect();

    let p = x_idx.len();
    let mut y = vec![f64::NAN; n_nodes];
    let mut x = RowMatrix::zeros(n_nodes, p);
    let mut seen = vec![false; n_nodes];
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(Error::Data(format!(
                "line {}: {} fields, header has {}",
                lineno + 1,
                fields.len(),
                columns.len()
            )));
        }
        let ext: u64 = fields[id_idx].parse().map_err(|_| {
            Error::Data(format!(
                "line {}: node id `{}` is not an integer",
                lineno + 1,
                fields[id_idx]
            ))
        })?;
        let node = remap.internal(ext).ok_or_else(|| {
            Error::Data(format!(
                "line {}: node id {ext} does not appear in the edge list",
                lineno + 1
            ))
        })? as usize;
        if seen[node] {
            return Err(Error::Data(format!(
                "line {}: duplicate row for node id {ext}",
                lineno + 1
            )));
        }
        seen[node] = true;
        let parse = |f: &str| -> Result<f64> {
            f.parse::<f64>()
                .map_err(|_| Error::Data(format!("line {}: non-numeric field `{f}`", lineno + 1)))
        };
        y[node] = parse(fields[y_idx])?;
        for (slot, &ci) in x_idx.iter().enumerate() {
            x.row_mut(node)[slot] = parse(fields[ci])?;
        }
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::Data(format!(
            "no covariate row for node with internal index {missing}"
        )));
    }
    Ok((y, x, names))
}

/// First pass over the covariate file: register ids absent from the edge
/// list. Returns how many new (isolated) nodes were added.
fn intern_covariate_ids(path: &Path, remap: &mut IdRemap, id_column: &str) -> Result<usize> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("covariate file is empty".into()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let id_idx = columns
        .iter()
        .position(|c| *c == id_column)
        .ok_or_else(|| Error::Data(format!("missing id column `{id_column}`")))?;
    let before = remap.len();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let field = line.split(',').nth(id_idx).map(str::trim).ok_or_else(|| {
            Error::Data(format!("line {}: missing id field", lineno + 2))
        })?;
        let ext: u64 = field.parse().map_err(|_| {
            Error::Data(format!(
                "line {}: node id `{field}` is not an integer",
                lineno + 2
            ))
        })?;
        remap.intern(ext);
    }
    Ok(remap.len() - before)
}

fn standardize_column(values: &mut [f64]) {
    let mean = stats::mean(values);
    let sd = stats::sample_variance(values).sqrt();
    let scale = if sd > 0.0 { 1.0 / sd } else { 1.0 };
    for v in values.iter_mut() {
        *v = (*v - mean) * scale;
    }
}

/// Ingest a dataset from files, run the configured pipeline, return results.
///
/// The node universe is the union of the edge-list ids and the covariate-file
/// ids: covariate rows whose id has no edges become isolated nodes (zero
/// weight row, no network regressor term), which keeps export/re-ingest an
/// identity even when the graph has fully isolated nodes.
pub fn estimate_real<P: AsRef<Path>>(
    edge_path: P,
    covariate_path: P,
    opts: &RealDataOptions,
) -> Result<RealDataOutput> {
    let (mut adjacency, mut remap) = read_edge_list(edge_path)?;
    let isolated = intern_covariate_ids(covariate_path.as_ref(), &mut remap, &opts.id_column)?;
    if isolated > 0 {
        log::warn!("{isolated} covariate node(s) have no edges; kept as isolated nodes");
        adjacency.pad_square(remap.len());
    }
    let n = adjacency.n_rows();
    let net: SparseNetwork = row_normalize(adjacency)?;
    let (mut y, mut x, names) = read_covariates(
        covariate_path.as_ref(),
        &remap,
        n,
        &opts.id_column,
        &opts.response_column,
    )?;

    if opts.standardize {
        standardize_column(&mut y);
        for j in 0..x.n_cols() {
            let mut col: Vec<f64> = (0..n).map(|i| x.row(i)[j]).collect();
            standardize_column(&mut col);
            for (i, v) in col.iter().enumerate() {
                x.row_mut(i)[j] = *v;
            }
        }
    }

    let part = partition_uniform(n, opts.k_workers, opts.partition_seed)?;
    let shards = crate::cluster::build_all_shards(&net, &part, &y, &x)?;
    let result = crate::cluster::run_on_shards(&shards, &part.alphas(), &opts.pipeline)?;
    Ok(RealDataOutput {
        result,
        remap,
        n_nodes: n,
        p: x.n_cols(),
        covariate_names: names,
    })
}

/// Export a dataset as edge list plus covariate CSV (round-trip format).
pub fn export_dataset_csv<P: AsRef<Path>>(
    net: &SparseNetwork,
    y: &[f64],
    x: &RowMatrix,
    edge_path: P,
    covariate_path: P,
) -> Result<()> {
    crate::network::write_edge_list(net.adjacency(), edge_path)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(covariate_path)?);
    write!(w, "node_id,y")?;
    for j in 1..=x.n_cols() {
        write!(w, ",x{j}")?;
    }
    writeln!(w)?;
    for (i, yi) in y.iter().enumerate().take(net.n_nodes()) {
        write!(w, "{i},{yi:.17e}")?;
        for v in x.row(i) {
            write!(w, ",{v:.17e}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
