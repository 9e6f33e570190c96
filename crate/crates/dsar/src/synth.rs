//! Synthetic data generation: networks, covariates, noise, SAR responses.
//!
//! Network designs:
//! - stochastic block model with M equally likely blocks and within/between
//!   edge probabilities (defaults 20/N and 2/N);
//! - power-law in-degrees P(d = k) proportional to k^{-alpha} truncated at
//!   N - 1, followers drawn uniformly without replacement.
//!
//! Responses solve (I - rho0 W) y = X beta0 + eps by fixed-point sweeps
//! y <- rho0 W y + X beta0 + eps, which contract because |rho0| < 1 and W is
//! row-stochastic; no dense inverse is ever formed.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal, StudentT};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mat::RowMatrix;
use crate::network::{row_normalize, CsrMatrix, SparseNetwork};
use crate::rng::{self, purpose};

/// Network family to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NetworkKind {
    Sbm,
    PowerLaw,
}

/// Generator settings for a synthetic network.
#[derive(Debug, Clone, Serialize)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    pub n_nodes: usize,
    /// Number of SBM blocks.
    pub sbm_blocks: usize,
    /// Within-block edge probability; `None` means 20/N.
    pub sbm_p_in: Option<f64>,
    /// Between-block edge probability; `None` means 2/N.
    pub sbm_p_out: Option<f64>,
    /// Power-law exponent (> 1; > 2 for a finite mean).
    pub pl_alpha: f64,
    /// Add one random out-edge to zero-out-degree nodes.
    pub ensure_min_outdegree: bool,
}

impl NetworkSpec {
    pub fn sbm(n_nodes: usize) -> Self {
        NetworkSpec {
            kind: NetworkKind::Sbm,
            n_nodes,
            sbm_blocks: 20,
            sbm_p_in: None,
            sbm_p_out: None,
            pl_alpha: 3.0,
            ensure_min_outdegree: false,
        }
    }

    pub fn powerlaw(n_nodes: usize) -> Self {
        NetworkSpec {
            kind: NetworkKind::PowerLaw,
            ..NetworkSpec::sbm(n_nodes)
        }
    }

    pub fn p_in(&self) -> f64 {
        self.sbm_p_in
            .unwrap_or(20.0 / self.n_nodes as f64)
            .clamp(0.0, 1.0)
    }

    pub fn p_out(&self) -> f64 {
        self.sbm_p_out
            .unwrap_or(2.0 / self.n_nodes as f64)
            .clamp(0.0, 1.0)
    }

    fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 {
            return Err(Error::InvalidConfig("n_nodes must be positive".into()));
        }
        match self.kind {
            NetworkKind::Sbm => {
                if self.sbm_blocks == 0 {
                    return Err(Error::InvalidConfig("sbm_blocks must be >= 1".into()));
                }
                for (name, p) in [("p_in", self.p_in()), ("p_out", self.p_out())] {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::InvalidConfig(format!(
                            "{name} = {p} outside [0,1]"
                        )));
                    }
                }
            }
            NetworkKind::PowerLaw => {
                if self.pl_alpha <= 1.0 {
                    return Err(Error::InvalidConfig(format!(
                        "pl_alpha = {} must exceed 1",
                        self.pl_alpha
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Error-term law for the SAR noise vector.
#[derive(Debug, Clone, Serialize)]
pub enum NoiseModel {
    /// eps_i ~ N(0, sigma^2) i.i.d.
    IidGaussian { sigma: f64 },
    /// Student-t with `dof` degrees of freedom, rescaled to variance sigma^2.
    IidStudentT { sigma: f64, dof: f64 },
    /// Sigma_e = sigma^2 I plus symmetric off-diagonal entries at the listed
    /// index pairs.
    SparseCorrelated {
        sigma: f64,
        pairs: Vec<(usize, usize)>,
        value: f64,
    },
    /// Sigma_e = (sigma^2 - gamma) I + gamma 1 1'.
    Equicorrelated { sigma: f64, gamma: f64 },
    /// Independent with per-node variances.
    Heteroscedastic { variances: Vec<f64> },
}

impl NoiseModel {
    pub fn standard_gaussian() -> Self {
        NoiseModel::IidGaussian { sigma: 1.0 }
    }

    /// Validate positive definiteness of the implied covariance.
    ///
    /// For n <= 500 the dense covariance is assembled and factorized; beyond
    /// that, parameter bounds (equicorrelation below 1/n, diagonal dominance
    /// for the sparse structure) are enforced instead.
    pub fn validate(&self, n_nodes: usize) -> Result<()> {
        let bound_check = match self {
            NoiseModel::IidGaussian { sigma } | NoiseModel::IidStudentT { sigma, .. } => {
                if *sigma < 0.0 {
                    return Err(Error::InvalidModel("sigma must be >= 0".into()));
                }
                if let NoiseModel::IidStudentT { dof, .. } = self {
                    if *dof <= 2.0 {
                        return Err(Error::InvalidModel(
                            "student-t dof must exceed 2 for finite variance".into(),
                        ));
                    }
                }
                return Ok(());
            }
            NoiseModel::Equicorrelated { sigma, gamma } => {
                // Eigenvalues are sigma^2 - gamma (x N-1) and
                // sigma^2 + (N-1) gamma, so gamma in [0, sigma^2) is exactly
                // positive definite at every N.
                let var = sigma * sigma;
                *gamma >= 0.0 && *gamma < var
            }
            NoiseModel::SparseCorrelated {
                sigma,
                pairs,
                value,
            } => {
                let var = sigma * sigma;
                let mut row_mass = std::collections::HashMap::<usize, f64>::new();
                let mut ok = true;
                for &(i, j) in pairs {
                    if i == j || i >= n_nodes || j >= n_nodes {
                        return Err(Error::InvalidModel(format!(
                            "sparse pair ({i},{j}) invalid for n = {n_nodes}"
                        )));
                    }
                    *row_mass.entry(i).or_default() += value.abs();
                    *row_mass.entry(j).or_default() += value.abs();
                }
                for (_, mass) in row_mass {
                    if mass >= var {
                        ok = false; // diagonal dominance lost
                    }
                }
                ok
            }
            NoiseModel::Heteroscedastic { variances } => {
                if variances.len() != n_nodes {
                    return Err(Error::Dimension(format!(
                        "heteroscedastic variances length {} != n_nodes {n_nodes}",
                        variances.len()
                    )));
                }
                variances.iter().all(|&v| v >= 0.0)
            }
        };

        if n_nodes <= 500 {
            let cov = self.dense_covariance(n_nodes);
            if nalgebra::Cholesky::new(cov).is_none() {
                return Err(Error::InvalidModel(
                    "implied error covariance is not positive definite".into(),
                ));
            }
            Ok(())
        } else if bound_check {
            Ok(())
        } else {
            Err(Error::InvalidModel(
                "error covariance parameter bounds violated (indefinite risk)".into(),
            ))
        }
    }

    fn dense_covariance(&self, n: usize) -> nalgebra::DMatrix<f64> {
        match self {
            NoiseModel::IidGaussian { sigma } | NoiseModel::IidStudentT { sigma, .. } => {
                nalgebra::DMatrix::identity(n, n) * (sigma * sigma)
            }
            NoiseModel::Equicorrelated { sigma, gamma } => {
                let mut m = nalgebra::DMatrix::from_element(n, n, *gamma);
                for i in 0..n {
                    m[(i, i)] = sigma * sigma;
                }
                m
            }
            NoiseModel::SparseCorrelated {
                sigma,
                pairs,
                value,
            } => {
                let mut m = nalgebra::DMatrix::identity(n, n) * (sigma * sigma);
                for &(i, j) in pairs {
                    m[(i, j)] = *value;
                    m[(j, i)] = *value;
                }
                m
            }
            NoiseModel::Heteroscedastic { variances } => {
                nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(variances))
            }
        }
    }
}

/// True data-generating parameters.
#[derive(Debug, Clone, Serialize)]
pub struct TrueModel {
    pub rho0: f64,
    pub beta0: Vec<f64>,
    pub noise: NoiseModel,
}

impl TrueModel {
    /// rho = 0.4, beta = (0.2, 0.4, 0.6, 0.8, 1.0), unit Gaussian noise.
    pub fn benchmark() -> Self {
        TrueModel {
            rho0: 0.4,
            beta0: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            noise: NoiseModel::standard_gaussian(),
        }
    }

    pub fn validate(&self, n_nodes: usize) -> Result<()> {
        if self.rho0.abs() >= 1.0 {
            return Err(Error::InvalidModel(format!(
                "|rho0| = {} must be below 1",
                self.rho0.abs()
            )));
        }
        self.noise.validate(n_nodes)
    }
}

/// Stochastic block model network.
pub fn gen_sbm(spec: &NetworkSpec, seed: u64) -> Result<SparseNetwork> {
    spec.validate()?;
    if spec.kind != NetworkKind::Sbm {
        return Err(Error::InvalidConfig("gen_sbm requires kind = sbm".into()));
    }
    let n = spec.n_nodes;
    let m = spec.sbm_blocks;
    let mut rng = rng::derive_rng(seed, &[purpose::NETWORK]);

    let labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..m as u32)).collect();
    let mut blocks: Vec<Vec<u32>> = vec![Vec::new(); m];
    for (i, &b) in labels.iter().enumerate() {
        blocks[b as usize].push(i as u32);
    }

    let p_in = spec.p_in();
    let p_out = spec.p_out();
    let mut triplets: Vec<(u32, u32, f64)> = Vec::new();
    for i in 0..n as u32 {
        let b = labels[i as usize] as usize;
        // Within-block followees: Binomial count + distinct uniform picks from
        // the block (equivalent to per-pair Bernoulli draws).
        let own_block = &blocks[b];
        if own_block.len() > 1 && p_in > 0.0 {
            let count = Binomial::new((own_block.len() - 1) as u64, p_in)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?
                .sample(&mut rng) as usize;
            for j in sample_distinct_excluding(&mut rng, own_block, i, count) {
                triplets.push((i, j, 1.0));
            }
        }
        // Cross-block followees over the complement of the block.
        let n_out = n - own_block.len();
        if n_out > 0 && p_out > 0.0 {
            let count = Binomial::new(n_out as u64, p_out)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?
                .sample(&mut rng) as usize;
            let mut chosen = std::collections::HashSet::new();
            while chosen.len() < count {
                let j = rng.random_range(0..n as u32);
                if labels[j as usize] as usize != b && chosen.insert(j) {
                    triplets.push((i, j, 1.0));
                }
            }
        }
    }
    finish_network(spec, triplets, &mut rng)
}

/// Uniform distinct sample of `count` nodes from `pool` excluding `skip`.
fn sample_distinct_excluding<R: Rng>(
    rng: &mut R,
    pool: &[u32],
    skip: u32,
    count: usize,
) -> Vec<u32> {
    let eligible = pool.len() - usize::from(pool.contains(&skip));
    let count = count.min(eligible);
    let mut chosen = std::collections::HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let j = pool[rng.random_range(0..pool.len())];
        if j != skip && chosen.insert(j) {
            out.push(j);
        }
    }
    out
}

/// Power-law in-degree network.
pub fn gen_powerlaw(spec: &NetworkSpec, seed: u64) -> Result<SparseNetwork> {
    spec.validate()?;
    if spec.kind != NetworkKind::PowerLaw {
        return Err(Error::InvalidConfig(
            "gen_powerlaw requires kind = powerlaw".into(),
        ));
    }
    let n = spec.n_nodes;
    let mut rng = rng::derive_rng(seed, &[purpose::NETWORK]);
    if n < 2 {
        return finish_network(spec, Vec::new(), &mut rng);
    }

    // Truncated zeta CDF over k = 1..=n-1.
    let max_deg = n - 1;
    let mut cdf = Vec::with_capacity(max_deg);
    let mut total = 0.0;
    for k in 1..=max_deg {
        total += (k as f64).powf(-spec.pl_alpha);
        cdf.push(total);
    }

    let mut triplets: Vec<(u32, u32, f64)> = Vec::new();
    for i in 0..n as u32 {
        let u: f64 = rng.random::<f64>() * total;
        let d = cdf.partition_point(|&c| c < u) + 1;
        let d = d.min(max_deg);
        // d distinct followers j != i: a_ji = 1.
        let mut chosen = std::collections::HashSet::with_capacity(d);
        while chosen.len() < d {
            let j = rng.random_range(0..n as u32);
            if j != i && chosen.insert(j) {
                triplets.push((j, i, 1.0));
            }
        }
    }
    finish_network(spec, triplets, &mut rng)
}

fn finish_network<R: Rng>(
    spec: &NetworkSpec,
    mut triplets: Vec<(u32, u32, f64)>,
    rng: &mut R,
) -> Result<SparseNetwork> {
    let n = spec.n_nodes;
    if spec.ensure_min_outdegree && n > 1 {
        let mut has_out = vec![false; n];
        for &(i, _, _) in &triplets {
            has_out[i as usize] = true;
        }
        for i in 0..n as u32 {
            if !has_out[i as usize] {
                let mut j = rng.random_range(0..n as u32);
                while j == i {
                    j = rng.random_range(0..n as u32);
                }
                triplets.push((i, j, 1.0));
            }
        }
    }
    let adjacency = CsrMatrix::from_triplets(n, n, triplets)?;
    row_normalize(adjacency)
}

/// Generate a network from its spec.
pub fn gen_network(spec: &NetworkSpec, seed: u64) -> Result<SparseNetwork> {
    match spec.kind {
        NetworkKind::Sbm => gen_sbm(spec, seed),
        NetworkKind::PowerLaw => gen_powerlaw(spec, seed),
    }
}

/// i.i.d. standard normal covariates, N x p.
pub fn gen_covariates(n_nodes: usize, p: usize, seed: u64) -> RowMatrix {
    let mut rng = rng::derive_rng(seed, &[purpose::COVARIATES]);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let data: Vec<f64> = (0..n_nodes * p).map(|_| normal.sample(&mut rng)).collect();
    RowMatrix::from_vec(data, n_nodes, p)
}

/// Draw the noise vector for a given model.
pub fn gen_noise(model: &NoiseModel, n_nodes: usize, seed: u64) -> Result<Vec<f64>> {
    model.validate(n_nodes)?;
    let mut rng = rng::derive_rng(seed, &[purpose::NOISE]);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let out = match model {
        NoiseModel::IidGaussian { sigma } => {
            (0..n_nodes).map(|_| sigma * normal.sample(&mut rng)).collect()
        }
        NoiseModel::IidStudentT { sigma, dof } => {
            let t = StudentT::new(*dof).map_err(|e| Error::InvalidModel(e.to_string()))?;
            // Standardize to unit variance: var(t_dof) = dof / (dof - 2).
            let scale = sigma * ((dof - 2.0) / dof).sqrt();
            (0..n_nodes).map(|_| scale * t.sample(&mut rng)).collect()
        }
        NoiseModel::Equicorrelated { sigma, gamma } => {
            // Closed-form square root of (sigma^2 - gamma) I + gamma 1 1':
            // a I + b 1 1' with a = sqrt(sigma^2 - gamma),
            // b = (sqrt(a^2 + n gamma) - a) / n.
            let a = (sigma * sigma - gamma).sqrt();
            let nf = n_nodes as f64;
            let b = ((a * a + nf * gamma).sqrt() - a) / nf;
            let z: Vec<f64> = (0..n_nodes).map(|_| normal.sample(&mut rng)).collect();
            let zsum: f64 = z.iter().sum();
            z.iter().map(|&zi| a * zi + b * zsum).collect()
        }
        NoiseModel::SparseCorrelated { .. } => {
            let cov = model.dense_covariance(n_nodes);
            let chol = nalgebra::Cholesky::new(cov).ok_or_else(|| {
                Error::InvalidModel("sparse correlated covariance is not positive definite".into())
            })?;
            let z = nalgebra::DVector::from_fn(n_nodes, |_, _| normal.sample(&mut rng));
            (chol.l() * z).iter().copied().collect()
        }
        NoiseModel::Heteroscedastic { variances } => variances
            .iter()
            .map(|&v| v.sqrt() * normal.sample(&mut rng))
            .collect(),
    };
    Ok(out)
}

/// Solve (I - rho0 W) y = X beta0 + eps by fixed-point sweeps.
///
/// Converges geometrically at rate |rho0| * max-row-sum(W); fails with the
/// spectral bound in the error if the residual never reaches 1e-10.
pub fn synth_response(
    net: &SparseNetwork,
    x: &RowMatrix,
    model: &TrueModel,
    eps: &[f64],
) -> Result<Vec<f64>> {
    let n = net.n_nodes();
    if x.n_rows() != n || eps.len() != n {
        return Err(Error::Dimension(format!(
            "covariates ({}) and noise ({}) must match n_nodes ({n})",
            x.n_rows(),
            eps.len()
        )));
    }
    model.validate(n)?;
    let spectral_bound = model.rho0.abs() * net.max_row_sum();
    if spectral_bound >= 1.0 {
        return Err(Error::InvalidModel(format!(
            "|rho0| * max-row-sum(W) = {spectral_bound} >= 1; fixed point does not contract"
        )));
    }

    let base: Vec<f64> = (0..n)
        .map(|i| {
            x.row(i)
                .iter()
                .zip(&model.beta0)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + eps[i]
        })
        .collect();

    let mut y = base.clone();
    let mut wy = vec![0.0f64; n];
    const TOL: f64 = 1e-10;
    const MAX_SWEEPS: usize = 10_000;
    for _sweep in 0..MAX_SWEEPS {
        net.weights().mul_vec(&y, &mut wy);
        let mut residual: f64 = 0.0;
        for i in 0..n {
            let next = model.rho0 * wy[i] + base[i];
            residual = residual.max((next - y[i]).abs());
            y[i] = next;
        }
        if residual <= TOL {
            // One more sweep so the reported iterate satisfies the fixed
            // point rather than merely being close to the previous one.
            net.weights().mul_vec(&y, &mut wy);
            let post: f64 = (0..n)
                .map(|i| (y[i] - model.rho0 * wy[i] - base[i]).abs())
                .fold(0.0, f64::max);
            if post <= TOL {
                return Ok(y);
            }
        }
    }
    let residual = {
        net.weights().mul_vec(&y, &mut wy);
        (0..n)
            .map(|i| (y[i] - model.rho0 * wy[i] - base[i]).abs())
            .fold(0.0, f64::max)
    };
    Err(Error::ResponseSolver {
        iterations: MAX_SWEEPS,
        residual,
        spectral_bound,
    })
}

/// Generate (network, covariates, noise, responses) for one replicate seed.
pub fn gen_dataset(
    spec: &NetworkSpec,
    model: &TrueModel,
    p: usize,
    seed: u64,
) -> Result<(SparseNetwork, RowMatrix, Vec<f64>)> {
    let net = gen_network(spec, seed)?;
    let x = gen_covariates(spec.n_nodes, p, seed);
    let eps = gen_noise(&model.noise, spec.n_nodes, seed)?;
    let y = synth_response(&net, &x, model, &eps)?;
    Ok((net, x, y))
}
