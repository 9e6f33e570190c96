//! Experiment configuration and its key-value file format.
//!
//! Config files are plain `key = value` lines; `#` starts a comment. Keys:
//!
//! ```text
//! network.kind        sbm | powerlaw            (default sbm)
//! network.n_nodes     integer                   (default 2000)
//! network.blocks      integer                   (sbm, default 20)
//! network.p_in        float | auto              (auto = 20/N)
//! network.p_out       float | auto              (auto = 2/N)
//! network.alpha       float                     (powerlaw exponent, default 3)
//! network.min_outdegree  true|false             (add one edge to sinks)
//! model.rho           float                     (default 0.4)
//! model.beta          comma floats              (default 0.2,0.4,0.6,0.8,1.0)
//! model.noise         gaussian | student_t | equicorrelated |
//!                     sparse_correlated | heteroscedastic
//! model.sigma         float                     (default 1)
//! model.t_dof         float                     (student_t)
//! model.gamma         float                     (equicorrelated)
//! model.sparse_pairs  integer                   (sparse_correlated: number of
//!                                                random disjoint index pairs)
//! model.sparse_value  float                     (sparse_correlated off-diagonal)
//! model.var_min/var_max  floats                 (heteroscedastic range)
//! workers             integer                   (default 10)
//! methods             comma of os|wlse|twlse    (default wlse,twlse)
//! replicates          integer                   (default 100)
//! seed                integer                   (default 42)
//! infer               none | exact | projected  (default none)
//! infer.dim           integer | auto            (auto = floor(log N)+1)
//! infer.sparse        true | false | auto       (auto = N >= 1e5)
//! infer.level         float                     (default 0.95)
//! solver.max_iter     integer                   (default 100)
//! solver.grad_tol     float                     (default 1e-8)
//! solver.rho_bound    float                     (default 0.99)
//! solver.multistart   integer                   (default 1)
//! fail_fast           true | false              (default false)
//! out                 path                      (output directory)
//! ```

use std::path::PathBuf;

use serde::Serialize;

use crate::cluster::{InferenceSettings, Method};
use crate::error::{Error, Result};
use crate::inference::CrossBlockSign;
use crate::lse::{SolverOptions, ThetaBounds};
use crate::rng;
use crate::synth::{NetworkKind, NetworkSpec, NoiseModel, TrueModel};

/// Inference mode requested in a config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InferenceModeConfig {
    None,
    Exact,
    Projected,
}

/// Inference block of the experiment config.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct InferenceConfig {
    pub mode: InferenceModeConfig,
    /// None = floor(log N) + 1.
    pub proj_dim: Option<usize>,
    /// None = sparse when N >= 100_000.
    pub proj_sparse: Option<bool>,
    pub level: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            mode: InferenceModeConfig::None,
            proj_dim: None,
            proj_sparse: None,
            level: 0.95,
        }
    }
}

impl InferenceConfig {
    /// Resolve into pipeline settings for one method. The one-shot estimator
    /// never gets inference (its curvature is not transmitted).
    pub fn settings(&self, method: Method, n_nodes: usize, seed: u64) -> InferenceSettings {
        if method == Method::Os {
            return InferenceSettings::None;
        }
        match self.mode {
            InferenceModeConfig::None => InferenceSettings::None,
            InferenceModeConfig::Exact => InferenceSettings::Exact { level: self.level },
            InferenceModeConfig::Projected => InferenceSettings::Projected {
                d: self
                    .proj_dim
                    .unwrap_or_else(|| InferenceSettings::default_proj_dim(n_nodes)),
                seed: rng::derive_key(seed, &[rng::purpose::PROJECTOR]),
                sparse: self.proj_sparse.unwrap_or(n_nodes >= 100_000),
                level: self.level,
            },
        }
    }
}

/// Full description of a replication experiment.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub network: NetworkSpec,
    pub model: TrueModel,
    pub k_workers: usize,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub base_seed: u64,
    pub inference: InferenceConfig,
    #[serde(skip)]
    pub solver: SolverOptions,
    #[serde(skip)]
    pub cross_sign: CrossBlockSign,
    pub fail_fast: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            network: NetworkSpec::sbm(2000),
            model: TrueModel::benchmark(),
            k_workers: 10,
            methods: vec![Method::Wlse, Method::Twlse],
            replicates: 100,
            base_seed: 42,
            inference: InferenceConfig::default(),
            solver: SolverOptions::default(),
            cross_sign: CrossBlockSign::default(),
            fail_fast: false,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicates must be >= 1".into()));
        }
        if self.k_workers == 0 || self.k_workers > self.network.n_nodes {
            return Err(Error::InvalidConfig(format!(
                "workers = {} invalid for N = {}",
                self.k_workers, self.network.n_nodes
            )));
        }
        // An empty method list runs the global estimator alone.
        if !(0.0..1.0).contains(&self.inference.level) {
            return Err(Error::InvalidConfig(format!(
                "confidence level {} outside (0,1)",
                self.inference.level
            )));
        }
        if let Some(dir) = &self.output_dir {
            if let Some(parent) = dir.parent() {
                if !parent.as_os_str().is_empty() && !parent.exists() {
                    return Err(Error::InvalidConfig(format!(
                        "output parent directory {} does not exist",
                        parent.display()
                    )));
                }
            }
        }
        self.model.validate(self.network.n_nodes)
    }

    /// Parse the key-value config format documented in the module header.
    pub fn from_str_config(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut noise_kind = "gaussian".to_string();
        let mut sigma = 1.0f64;
        let mut t_dof = 5.0f64;
        let mut gamma = 0.0f64;
        let mut sparse_pairs = 0usize;
        let mut sparse_value = 0.0f64;
        let mut var_range = (0.8f64, 1.2f64);
        let mut rho_bound = 0.99f64;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| {
                Error::InvalidConfig(format!("line {}: bad {what}: `{value}`", lineno + 1))
            };
            match key {
                "network.kind" => {
                    cfg.network.kind = match value {
                        "sbm" => NetworkKind::Sbm,
                        "powerlaw" => NetworkKind::PowerLaw,
                        _ => return Err(bad("network kind")),
                    }
                }
                "network.n_nodes" => {
                    cfg.network.n_nodes = value.parse().map_err(|_| bad("integer"))?
                }
                "network.blocks" => {
                    cfg.network.sbm_blocks = value.parse().map_err(|_| bad("integer"))?
                }
                "network.p_in" => {
                    cfg.network.sbm_p_in = parse_auto_f64(value).map_err(|_| bad("p_in"))?
                }
                "network.p_out" => {
                    cfg.network.sbm_p_out = parse_auto_f64(value).map_err(|_| bad("p_out"))?
                }
                "network.alpha" => {
                    cfg.network.pl_alpha = value.parse().map_err(|_| bad("float"))?
                }
                "network.min_outdegree" => {
                    cfg.network.ensure_min_outdegree =
                        value.parse().map_err(|_| bad("bool"))?
                }
                "model.rho" => cfg.model.rho0 = value.parse().map_err(|_| bad("float"))?,
                "model.beta" => {
                    cfg.model.beta0 = value
                        .split(',')
                        .map(|v| v.trim().parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad("beta list"))?
                }
                "model.noise" => noise_kind = value.to_string(),
                "model.sigma" => sigma = value.parse().map_err(|_| bad("float"))?,
                "model.t_dof" => t_dof = value.parse().map_err(|_| bad("float"))?,
                "model.gamma" => gamma = value.parse().map_err(|_| bad("float"))?,
                "model.sparse_pairs" => {
                    sparse_pairs = value.parse().map_err(|_| bad("integer"))?
                }
                "model.sparse_value" => {
                    sparse_value = value.parse().map_err(|_| bad("float"))?
                }
                "model.var_min" => var_range.0 = value.parse().map_err(|_| bad("float"))?,
                "model.var_max" => var_range.1 = value.parse().map_err(|_| bad("float"))?,
                "workers" => cfg.k_workers = value.parse().map_err(|_| bad("integer"))?,
                "methods" => {
                    cfg.methods = value
                        .split(',')
                        .map(|m| Method::parse(m.trim()))
                        .collect::<Result<Vec<_>>>()?
                }
                "replicates" => cfg.replicates = value.parse().map_err(|_| bad("integer"))?,
                "seed" => cfg.base_seed = value.parse().map_err(|_| bad("integer"))?,
                "infer" => {
                    cfg.inference.mode = match value {
                        "none" => InferenceModeConfig::None,
                        "exact" => InferenceModeConfig::Exact,
                        "projected" => InferenceModeConfig::Projected,
                        _ => return Err(bad("inference mode")),
                    }
                }
                "infer.dim" => {
                    cfg.inference.proj_dim = match parse_auto_f64(value) {
                        Ok(None) => None,
                        _ => Some(value.parse().map_err(|_| bad("integer"))?),
                    }
                }
                "infer.sparse" => {
                    cfg.inference.proj_sparse = match value {
                        "auto" => None,
                        _ => Some(value.parse().map_err(|_| bad("bool"))?),
                    }
                }
                "infer.level" => {
                    cfg.inference.level = value.parse().map_err(|_| bad("float"))?
                }
                "solver.max_iter" => {
                    cfg.solver.max_iter = value.parse().map_err(|_| bad("integer"))?
                }
                "solver.grad_tol" => {
                    cfg.solver.grad_tol = value.parse().map_err(|_| bad("float"))?
                }
                "solver.rho_bound" => rho_bound = value.parse().map_err(|_| bad("float"))?,
                "solver.multistart" => {
                    cfg.solver.multistart = value.parse().map_err(|_| bad("integer"))?
                }
                "fail_fast" => cfg.fail_fast = value.parse().map_err(|_| bad("bool"))?,
                "out" => cfg.output_dir = Some(PathBuf::from(value)),
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }

        cfg.solver.bounds = ThetaBounds {
            rho_min: -rho_bound,
            rho_max: rho_bound,
        };
        cfg.model.noise = match noise_kind.as_str() {
            "gaussian" => NoiseModel::IidGaussian { sigma },
            "student_t" => NoiseModel::IidStudentT { sigma, dof: t_dof },
            "equicorrelated" => NoiseModel::Equicorrelated { sigma, gamma },
            "sparse_correlated" => NoiseModel::SparseCorrelated {
                sigma,
                pairs: disjoint_pairs(cfg.network.n_nodes, sparse_pairs, cfg.base_seed),
                value: sparse_value,
            },
            "heteroscedastic" => {
                let n = cfg.network.n_nodes;
                NoiseModel::Heteroscedastic {
                    variances: heteroscedastic_grid(n, var_range.0, var_range.1),
                }
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown noise kind `{other}`"
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file<P: AsRef<std::path::Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(&path)?;
        Self::from_str_config(&text)
    }
}

/// Seeded disjoint index pairs for the sparse-correlated noise structure.
pub fn disjoint_pairs(n: usize, count: usize, seed: u64) -> Vec<(usize, usize)> {
    use rand::seq::SliceRandom;
    let mut nodes: Vec<usize> = (0..n).collect();
    let mut rng = crate::rng::derive_rng(seed, &[0x5041_4952]);
    nodes.shuffle(&mut rng);
    nodes
        .chunks_exact(2)
        .take(count)
        .map(|c| (c[0], c[1]))
        .collect()
}

/// Evenly spaced per-node variances spanning [lo, hi].
pub fn heteroscedastic_grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if n <= 1 {
                lo
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

fn parse_auto_f64(value: &str) -> std::result::Result<Option<f64>, std::num::ParseFloatError> {
    if value == "auto" {
        Ok(None)
    } else {
        value.parse::<f64>().map(Some)
    }
}
