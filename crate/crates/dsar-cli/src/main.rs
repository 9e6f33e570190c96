//! Command-line driver for distributed SAR estimation and inference.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dsar::cluster::{InferenceSettings, Method, PipelineOptions};
use dsar::harness::{
    estimate_real, export_dataset_csv, run_experiment, timing_csv, timing_report,
    ExperimentConfig, InferenceModeConfig, RealDataOptions, RunMetadata,
};
use dsar::synth::{NetworkSpec, NoiseModel, TrueModel};

#[derive(Parser)]
#[command(
    name = "dsar",
    about = "Distributed estimation and inference for the SAR model on sparse networks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and export it as edge list + CSV.
    Synth(SynthArgs),
    /// Estimate on an edge list + covariate CSV.
    Fit(FitArgs),
    /// Estimate and produce an inference CSV (SEs, CIs, p-values).
    Infer(FitArgs),
    /// Wall-clock sweep over network sizes.
    Bench(BenchArgs),
    /// Run a replication experiment from a config file.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Network family: sbm | powerlaw.
    #[arg(long, default_value = "sbm")]
    kind: String,
    #[arg(long = "n-nodes", default_value_t = 2000)]
    n_nodes: usize,
    /// SBM blocks.
    #[arg(long, default_value_t = 20)]
    blocks: usize,
    /// Within-block edge probability (default 20/N).
    #[arg(long)]
    p_in: Option<f64>,
    /// Between-block edge probability (default 2/N).
    #[arg(long)]
    p_out: Option<f64>,
    /// Power-law exponent.
    #[arg(long, default_value_t = 3.0)]
    alpha: f64,
    /// Give zero-out-degree nodes one random edge.
    #[arg(long = "ensure-min-outdegree")]
    ensure_min_outdegree: bool,
    #[arg(long, default_value_t = 0.4)]
    rho: f64,
    /// Comma-separated true coefficients.
    #[arg(long, default_value = "0.2,0.4,0.6,0.8,1.0")]
    beta: String,
    /// Noise kind: gaussian | student_t.
    #[arg(long, default_value = "gaussian")]
    noise: String,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long = "t-dof", default_value_t = 5.0)]
    t_dof: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Edge list output path.
    #[arg(long = "out-edges")]
    out_edges: PathBuf,
    /// Covariate/response CSV output path.
    #[arg(long = "out-data")]
    out_data: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Edge list file (src dst per line).
    #[arg(long)]
    edges: PathBuf,
    /// Covariate CSV with node id, response, covariate columns.
    #[arg(long)]
    data: PathBuf,
    /// Response column name.
    #[arg(long, default_value = "y")]
    response: String,
    /// Node id column name.
    #[arg(long = "id-column", default_value = "node_id")]
    id_column: String,
    /// Standardize response and covariates (zero mean, unit variance).
    #[arg(long, default_value_t = false)]
    standardize: bool,
    #[arg(long, default_value_t = 10)]
    workers: usize,
    /// os | wlse | twlse.
    #[arg(long, default_value = "twlse")]
    method: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// none | exact | projected (infer subcommand defaults to projected).
    #[arg(long)]
    infer: Option<String>,
    /// Projection dimension (default floor(log N) + 1).
    #[arg(long = "proj-dim")]
    proj_dim: Option<usize>,
    #[arg(long = "proj-seed")]
    proj_seed: Option<u64>,
    /// Use the sparse projector entries.
    #[arg(long = "proj-sparse", default_value_t = false)]
    proj_sparse: bool,
    /// Confidence level.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Write inference CSV here (infer subcommand).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the message log CSV here.
    #[arg(long = "message-log")]
    message_log: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated network sizes.
    #[arg(long = "n-sweep", default_value = "10000,20000,40000")]
    n_sweep: String,
    #[arg(long, default_value_t = 36)]
    workers: usize,
    #[arg(long, default_value = "sbm")]
    kind: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Key-value config file.
    #[arg(long)]
    config: PathBuf,
    /// Override the number of workers.
    #[arg(long)]
    workers: Option<usize>,
    /// Override the replicate count.
    #[arg(long)]
    replicates: Option<usize>,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the method list (comma separated).
    #[arg(long)]
    method: Option<String>,
    /// Full-size run: 500 replicates.
    #[arg(long = "paper-scale", default_value_t = false)]
    paper_scale: bool,
    /// Output directory for metrics CSV and metadata JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Synth(args) => cmd_synth(args),
        Command::Fit(args) => cmd_fit(args, false),
        Command::Infer(args) => cmd_fit(args, true),
        Command::Bench(args) => cmd_bench(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn parse_network(kind: &str, n: usize, args: &SynthArgs) -> Result<NetworkSpec> {
    let mut spec = match kind {
        "sbm" => NetworkSpec::sbm(n),
        "powerlaw" => NetworkSpec::powerlaw(n),
        other => bail!("unknown network kind `{other}`"),
    };
    spec.sbm_blocks = args.blocks;
    spec.sbm_p_in = args.p_in;
    spec.sbm_p_out = args.p_out;
    spec.pl_alpha = args.alpha;
    spec.ensure_min_outdegree = args.ensure_min_outdegree;
    Ok(spec)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = parse_network(&args.kind, args.n_nodes, &args)?;
    let beta: Vec<f64> = args
        .beta
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .context("parsing --beta")?;
    let noise = match args.noise.as_str() {
        "gaussian" => NoiseModel::IidGaussian { sigma: args.sigma },
        "student_t" => NoiseModel::IidStudentT {
            sigma: args.sigma,
            dof: args.t_dof,
        },
        other => bail!("unknown noise kind `{other}`"),
    };
    let model = TrueModel {
        rho0: args.rho,
        beta0: beta,
        noise,
    };
    let p = model.beta0.len();
    let (net, x, y) = dsar::synth::gen_dataset(&spec, &model, p, args.seed)?;
    export_dataset_csv(&net, &y, &x, &args.out_edges, &args.out_data)?;
    eprintln!(
        "wrote {} nodes, {} edges to {} / {}",
        net.n_nodes(),
        net.n_edges(),
        args.out_edges.display(),
        args.out_data.display()
    );
    Ok(())
}

fn cmd_fit(args: FitArgs, default_infer: bool) -> Result<()> {
    let method = Method::parse(&args.method)?;
    let infer_mode = args
        .infer
        .clone()
        .unwrap_or_else(|| {
            if default_infer {
                "projected".to_string()
            } else {
                "none".to_string()
            }
        });
    // Resolve N lazily after ingestion for the default projection dimension;
    // pass a placeholder here and fix below.
    let opts = RealDataOptions {
        id_column: args.id_column.clone(),
        response_column: args.response.clone(),
        standardize: args.standardize,
        k_workers: args.workers,
        partition_seed: args.seed,
        pipeline: PipelineOptions::estimate_only(method),
    };

    // First pass reads files to learn N (cheap relative to estimation), then
    // configures inference.
    let (adj, _) = dsar::network::read_edge_list(&args.edges)?;
    let n_nodes = adj.n_rows();
    drop(adj);
    let inference = match infer_mode.as_str() {
        "none" => InferenceSettings::None,
        "exact" => InferenceSettings::Exact { level: args.level },
        "projected" => InferenceSettings::Projected {
            d: args
                .proj_dim
                .unwrap_or_else(|| InferenceSettings::default_proj_dim(n_nodes)),
            seed: args.proj_seed.unwrap_or(args.seed),
            sparse: args.proj_sparse || n_nodes >= 100_000,
            level: args.level,
        },
        other => bail!("unknown inference mode `{other}`"),
    };
    let opts = RealDataOptions {
        pipeline: PipelineOptions {
            inference,
            ..opts.pipeline
        },
        ..opts
    };

    let out = estimate_real(&args.edges, &args.data, &opts)?;
    let est = &out.result.estimate;
    println!(
        "method={} rounds={} bytes={}",
        est.method.name(),
        est.rounds_used,
        out.result.total_message_bytes()
    );
    println!("rho = {:+.6}", est.theta.rho);
    for (j, b) in est.theta.beta.iter().enumerate() {
        let name = out
            .covariate_names
            .get(j)
            .cloned()
            .unwrap_or_else(|| format!("x{}", j + 1));
        println!("beta[{name}] = {b:+.6}");
    }
    if out.result.inference.is_some() {
        let csv = out.inference_csv();
        match &args.out {
            Some(path) => {
                std::fs::write(path, &csv)?;
                eprintln!("inference table written to {}", path.display());
            }
            None => print!("{csv}"),
        }
    }
    if let Some(path) = &args.message_log {
        std::fs::write(path, dsar::cluster::messages_to_csv(&out.result.messages))?;
        eprintln!("message log written to {}", path.display());
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let sweep: Vec<usize> = args
        .n_sweep
        .split(',')
        .map(|v| v.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .context("parsing --n-sweep")?;
    let spec = match args.kind.as_str() {
        "sbm" => NetworkSpec::sbm(0),
        "powerlaw" => NetworkSpec::powerlaw(0),
        other => bail!("unknown network kind `{other}`"),
    };
    let model = TrueModel::benchmark();
    let rows = timing_report(&spec, &model, &sweep, args.workers, args.seed)?;
    let csv = timing_csv(&rows);
    match &args.out {
        Some(path) => {
            std::fs::write(path, &csv)?;
            eprintln!("timing table written to {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let mut config = ExperimentConfig::from_file(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(k) = args.workers {
        config.k_workers = k;
    }
    if let Some(r) = args.replicates {
        config.replicates = r;
    }
    if let Some(s) = args.seed {
        config.base_seed = s;
    }
    if let Some(methods) = &args.method {
        config.methods = methods
            .split(',')
            .map(|m| Method::parse(m.trim()))
            .collect::<dsar::Result<_>>()?;
    }
    if args.paper_scale {
        config.replicates = 500;
    }
    if let Some(out) = &args.out {
        config.output_dir = Some(out.clone());
    }
    config.validate()?;

    let metadata = RunMetadata::collect(&config);
    let table = run_experiment(&config)?;
    let csv = table.to_csv();
    match &config.output_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("metrics.csv"), &csv)?;
            std::fs::write(dir.join("methods.csv"), table.methods_csv())?;
            std::fs::write(
                dir.join("run.json"),
                serde_json::to_string_pretty(&metadata)?,
            )?;
            eprintln!("metrics written to {}", dir.join("metrics.csv").display());
        }
        None => print!("{csv}"),
    }
    if !table.failures.is_empty() {
        eprintln!(
            "{} of {} replicates failed and were excluded:",
            table.failures.len(),
            config.replicates
        );
        for f in table.failures.iter().take(5) {
            eprintln!("  {f}");
        }
    }
    // Echo the inference block usage hint when CP columns are empty.
    if config.inference.mode == InferenceModeConfig::None
        && table.rows.iter().all(|r| r.cp.is_none())
    {
        eprintln!("note: no inference configured (set `infer = projected` for CP columns)");
    }
    Ok(())
}
