use nalgebra::DMatrix;

use super::*;
use crate::lse::Theta;
use crate::mat::RowMatrix;
use crate::network::{build_shard, partition_uniform, Partition, SparseNetwork, WorkerShard};
use crate::oracle;
use crate::synth::{gen_covariates, gen_noise, synth_response, NoiseModel, TrueModel};

fn test_dataset(n: usize, seed: u64, sigma: f64) -> (SparseNetwork, RowMatrix, Vec<f64>) {
    let net = oracle::random_net(n, 0.1, seed);
    let x = gen_covariates(n, 2, seed);
    let eps = gen_noise(&NoiseModel::IidGaussian { sigma }, n, seed).unwrap();
    let model = TrueModel {
        rho0: 0.4,
        beta0: vec![0.5, -0.3],
        noise: NoiseModel::IidGaussian { sigma },
    };
    let y = synth_response(&net, &x, &model, &eps).unwrap();
    (net, x, y)
}

fn shards_for(
    net: &SparseNetwork,
    x: &RowMatrix,
    y: &[f64],
    k: usize,
    seed: u64,
) -> (Partition, Vec<WorkerShard>) {
    let part = partition_uniform(net.n_nodes(), k, seed).unwrap();
    let shards = (0..k)
        .map(|w| build_shard(net, &part, y, x, w).unwrap())
        .collect();
    (part, shards)
}

/// Rebuild the dense N x N factor matrices from the sparse columns.
fn dense_from_factors(
    f: &WorkerFactors,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = f.n_total;
    let mut xi = DMatrix::zeros(n, n);
    let mut v1 = DMatrix::zeros(n, n);
    let mut v2 = DMatrix::zeros(n, n);
    for (a, &g) in f.local_nodes.iter().enumerate() {
        for &(r, v) in &f.xi1_cols[a] {
            xi[(r as usize, g as usize)] += v * f.d_local[a];
        }
        for &(r, v) in &f.b_cols[a] {
            v1[(r as usize, g as usize)] += v;
        }
    }
    // V2 = C Bt' has general columns.
    for a in 0..f.n_local {
        for &(r, cv) in &f.c_cols[a] {
            for &(c, bv) in &f.btilde_cols[a] {
                v2[(r as usize, c as usize)] += cv * bv;
            }
        }
    }
    (xi, v1, v2)
}

#[test]
fn plugins_on_noiseless_data_vanish() {
    let (net, x, y) = test_dataset(60, 1, 0.0);
    let theta = Theta::new(0.4, vec![0.5, -0.3]);
    let plugins = estimate_plugins(&theta, &net, &y, &x);
    assert!(plugins.sigma2_eps_hat <= 1e-10);
    assert!(plugins.sigma2_tilde_hat >= plugins.sigma2_eps_hat);
}

#[test]
fn plugins_at_zero_theta_reduce_to_mean_square() {
    let (net, x, y) = test_dataset(50, 2, 1.0);
    let theta = Theta::new(0.0, vec![0.0, 0.0]);
    let plugins = estimate_plugins(&theta, &net, &y, &x);
    let msq: f64 = y.iter().map(|v| v * v).sum::<f64>() / 50.0;
    assert!((plugins.sigma2_eps_hat - msq).abs() < 1e-12);
    assert!((plugins.sigma2_tilde_hat - msq).abs() < 1e-12);
}

#[test]
fn plugins_recover_noise_variance() {
    let mut acc = 0.0;
    let reps = 5;
    for r in 0..reps {
        let spec = crate::synth::NetworkSpec::sbm(10_000);
        let model = TrueModel::benchmark();
        let (net, x, y) = crate::synth::gen_dataset(&spec, &model, 5, 4000 + r).unwrap();
        let theta = Theta::new(model.rho0, model.beta0.clone());
        acc += estimate_plugins(&theta, &net, &y, &x).sigma2_eps_hat;
    }
    let mean = acc / reps as f64;
    assert!((0.95..=1.05).contains(&mean), "sigma2_eps mean {mean}");
}

#[test]
fn pooled_plugins_match_global() {
    let (net, x, y) = test_dataset(90, 3, 1.0);
    let theta = Theta::new(0.25, vec![0.4, -0.1]);
    let (part, shards) = shards_for(&net, &x, &y, 3, 5);
    let parts: Vec<(f64, f64)> = shards
        .iter()
        .map(|s| {
            let f = build_factors(s, &theta).unwrap();
            (f.sigma2_eps_part, f.gram_quad_part)
        })
        .collect();
    let pooled = pool_plugins(&parts, &part.alphas());
    let global = estimate_plugins(&theta, &net, &y, &x);
    assert!((pooled.sigma2_eps_hat - global.sigma2_eps_hat).abs() < 1e-12);
    assert!((pooled.sigma2_tilde_hat - global.sigma2_tilde_hat).abs() < 1e-12);
}

#[test]
fn factors_match_dense_oracle() {
    let (net, x, y) = test_dataset(60, 7, 1.0);
    let theta = Theta::new(0.35, vec![0.2, 0.6]);
    let (part, shards) = shards_for(&net, &x, &y, 3, 9);
    for shard in &shards {
        let f = build_factors(shard, &theta).unwrap();
        let oracle_f =
            oracle::dense_factors(&net, &y, &x, theta.rho, part.set(shard.worker_id()));
        let (xi, v1, v2) = dense_from_factors(&f);
        assert!((&xi - &oracle_f.xi_dag).abs().max() <= 1e-10, "Xi mismatch");
        assert!((&v1 - &oracle_f.v1).abs().max() <= 1e-10, "V1 mismatch");
        assert!((&v2 - &oracle_f.v2).abs().max() <= 1e-10, "V2 mismatch");

        let (t1, t2, t3) = f.dense_t_vectors();
        for r in 0..60 {
            assert!((t1[r] - oracle_f.t1[r]).abs() <= 1e-10, "T1 mismatch");
            assert!((t2[r] - oracle_f.t2[r]).abs() <= 1e-10, "T2 mismatch");
            for j in 0..2 {
                assert!((t3.row(j)[r] - oracle_f.t3[(j, r)]).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn factors_at_zero_rho_collapse() {
    // At rho = 0: Ddot = 0, D = S = I, so Xi_k = -(W + W') J_k.
    let (net, x, y) = test_dataset(40, 11, 1.0);
    let theta = Theta::new(0.0, vec![0.1, 0.1]);
    let (part, shards) = shards_for(&net, &x, &y, 2, 3);
    let w = oracle::dense_w(&net);
    for shard in &shards {
        let f = build_factors(shard, &theta).unwrap();
        let (xi, _, _) = dense_from_factors(&f);
        let mut jk = DMatrix::zeros(40, 40);
        for &i in part.set(shard.worker_id()) {
            jk[(i as usize, i as usize)] = 1.0;
        }
        let expected = -(&w + w.transpose()) * &jk;
        assert!((&xi - &expected).abs().max() <= 1e-12);
    }
}

#[test]
fn v1_factors_form_partition_of_unity() {
    // sum_k V_1k = D S' since sum_k J_k = I.
    let (net, x, y) = test_dataset(60, 13, 1.0);
    let theta = Theta::new(0.3, vec![0.2, -0.2]);
    let (_, shards) = shards_for(&net, &x, &y, 4, 7);
    let mut total = DMatrix::zeros(60, 60);
    for shard in &shards {
        let f = build_factors(shard, &theta).unwrap();
        let (_, v1, _) = dense_from_factors(&f);
        total += v1;
    }
    let d = oracle::dense_d_diag(&net, theta.rho);
    let s = oracle::dense_s(&net, theta.rho);
    let mut expected = s.transpose();
    for r in 0..60 {
        for c in 0..60 {
            expected[(r, c)] *= d[r];
        }
    }
    assert!((&total - &expected).abs().max() <= 1e-10);
}

#[test]
fn sigma1_exact_matches_dense_oracle() {
    let (net, x, y) = test_dataset(60, 17, 1.0);
    let theta = Theta::new(0.3, vec![0.4, 0.1]);
    let (part, shards) = shards_for(&net, &x, &y, 3, 11);
    let plugins = estimate_plugins(&theta, &net, &y, &x);

    let factors: Vec<WorkerFactors> = shards
        .iter()
        .map(|s| build_factors(s, &theta).unwrap())
        .collect();
    let sigma1 = sigma1_exact(&factors, &part.alphas(), &plugins, CrossBlockSign::default())
        .unwrap();

    let dense_factor_sets: Vec<oracle::DenseFactors> = (0..3)
        .map(|k| oracle::dense_factors(&net, &y, &x, theta.rho, part.set(k)))
        .collect();
    let dense = oracle::dense_sigma1(
        &dense_factor_sets,
        &part.alphas(),
        plugins.sigma2_eps_hat,
        plugins.sigma2_tilde_hat,
        1.0,
    );
    for i in 0..3 {
        for j in 0..3 {
            assert!(
                (sigma1[(i, j)] - dense[(i, j)]).abs() <= 1e-8 * dense[(i, j)].abs().max(1.0),
                "entry ({i},{j}): {} vs {}",
                sigma1[(i, j)],
                dense[(i, j)]
            );
        }
    }
}

#[test]
fn sigma1_beta_block_is_symmetric() {
    let (net, x, y) = test_dataset(50, 19, 1.0);
    let theta = Theta::new(0.2, vec![0.3, 0.7]);
    let (part, shards) = shards_for(&net, &x, &y, 2, 13);
    let plugins = estimate_plugins(&theta, &net, &y, &x);
    let factors: Vec<WorkerFactors> = shards
        .iter()
        .map(|s| build_factors(s, &theta).unwrap())
        .collect();
    let sigma1 =
        sigma1_exact(&factors, &part.alphas(), &plugins, CrossBlockSign::default()).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((sigma1[(i, j)] - sigma1[(j, i)]).abs() <= 1e-10);
        }
    }
}

#[test]
fn sigma1_is_partition_invariant_at_fixed_theta() {
    let (net, x, y) = test_dataset(80, 23, 1.0);
    let theta = Theta::new(0.3, vec![0.1, -0.4]);
    let plugins = estimate_plugins(&theta, &net, &y, &x);
    let mut results = Vec::new();
    for k in [1usize, 2, 4] {
        let (part, shards) = shards_for(&net, &x, &y, k, 31);
        let factors: Vec<WorkerFactors> = shards
            .iter()
            .map(|s| build_factors(s, &theta).unwrap())
            .collect();
        results.push(
            sigma1_exact(&factors, &part.alphas(), &plugins, CrossBlockSign::default())
                .unwrap(),
        );
    }
    for r in &results[1..] {
        assert!((r - &results[0]).abs().max() <= 1e-8);
    }
}

#[test]
fn projector_entries_have_matching_second_moments() {
    for sparse in [false, true] {
        let (r1, _) = make_projectors(50_000, 20, 99, sparse);
        let mut buf = vec![0.0f64; 20];
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for j in 0..50_000 {
            r1.fill_column(j, &mut buf);
            for &v in &buf {
                sum_sq += v * v;
                count += 1;
            }
        }
        let var = sum_sq / count as f64;
        let expected = 1.0 / 20.0;
        assert!(
            (var - expected).abs() < 0.02 * expected,
            "entry variance {var} vs {expected} (sparse = {sparse})"
        );
    }
}

#[test]
fn projector_column_norms_center_at_one() {
    let (r1, _) = make_projectors(2000, 15, 7, false);
    let mut buf = vec![0.0f64; 15];
    let mut acc = 0.0;
    for j in 0..2000 {
        r1.fill_column(j, &mut buf);
        acc += buf.iter().map(|v| v * v).sum::<f64>();
    }
    let mean = acc / 2000.0;
    // ||col||^2 ~ chi^2_d / d: var = 2/d, so the mean over 2000 columns has
    // sd ~ sqrt(2/(15 * 2000)).
    let bound = 3.0 * (2.0f64 / (15.0 * 2000.0)).sqrt();
    assert!((mean - 1.0).abs() < bound, "mean column norm {mean}");
}

#[test]
fn projector_columns_are_seed_deterministic() {
    let (a, _) = make_projectors(100, 8, 42, true);
    let (b, _) = make_projectors(100, 8, 42, true);
    let (c, _) = make_projectors(100, 8, 43, true);
    let mut ba = vec![0.0; 8];
    let mut bb = vec![0.0; 8];
    let mut bc = vec![0.0; 8];
    a.fill_column(57, &mut ba);
    b.fill_column(57, &mut bb);
    c.fill_column(57, &mut bc);
    assert_eq!(ba, bb);
    assert_ne!(ba, bc);
}

#[test]
fn identity_projector_reproduces_exact_sigma1() {
    let (net, x, y) = test_dataset(60, 29, 1.0);
    let theta = Theta::new(0.25, vec![0.2, 0.5]);
    let (part, shards) = shards_for(&net, &x, &y, 3, 17);
    let plugins = estimate_plugins(&theta, &net, &y, &x);
    let factors: Vec<WorkerFactors> = shards
        .iter()
        .map(|s| build_factors(s, &theta).unwrap())
        .collect();
    let exact =
        sigma1_exact(&factors, &part.alphas(), &plugins, CrossBlockSign::default()).unwrap();

    let r1 = Projector::identity(60);
    let r2 = Projector::identity(60);
    let packs: Vec<InferencePack> = factors
        .iter()
        .map(|f| build_pack(f, &r1, &r2).unwrap())
        .collect();
    let projected =
        sigma1_projected(&packs, &part.alphas(), &plugins, CrossBlockSign::default()).unwrap();
    assert!(
        (&projected - &exact).abs().max() <= 1e-10,
        "identity hook mismatch {}",
        (&projected - &exact).abs().max()
    );
}

#[test]
fn projected_traces_are_conditionally_unbiased() {
    let (net, x, y) = test_dataset(60, 31, 1.0);
    let theta = Theta::new(0.3, vec![0.4, -0.2]);
    let (part, shards) = shards_for(&net, &x, &y, 2, 19);
    let factors: Vec<WorkerFactors> = shards
        .iter()
        .map(|s| build_factors(s, &theta).unwrap())
        .collect();

    // Dense targets: every trace/product entering the pooled covariance.
    let d0 = oracle::dense_factors(&net, &y, &x, theta.rho, part.set(0));
    let d1 = oracle::dense_factors(&net, &y, &x, theta.rho, part.set(1));
    let targets = [
        (&d0.xi_dag * &d1.xi_dag).trace(),
        (d0.v1.transpose() * &d1.v2).trace(),
        d0.t1.dot(&d1.t2),
        d0.t1.dot(&d1.t1),
        (&d0.t3 * d1.t3.transpose())[(0, 0)],
    ];

    let d = 6;
    let seeds = 200;
    let mut draws: Vec<Vec<f64>> = vec![Vec::with_capacity(seeds); targets.len()];
    for s in 0..seeds {
        let (r1, r2) = make_projectors(60, d, 1000 + s as u64, false);
        let p0 = build_pack(&factors[0], &r1, &r2).unwrap();
        let p1 = build_pack(&factors[1], &r1, &r2).unwrap();
        let mut tr_xi = 0.0;
        let mut tr_v = 0.0;
        for i in 0..d {
            for j in 0..d {
                tr_xi += p0.xi1_r[(i, j)] * p1.xi2_r[(j, i)];
                tr_v += p0.v1_r[(i, j)] * p1.v2_r[(i, j)];
            }
        }
        draws[0].push(tr_xi);
        draws[1].push(tr_v);
        draws[2].push(p0.t1_r.dot(&p1.t2_r));
        draws[3].push(p0.t1_r.dot(&p1.t1_r));
        let mut t3t3 = 0.0;
        for m in 0..d {
            t3t3 += p0.t3_r[(0, m)] * p1.t3_r[(0, m)];
        }
        draws[4].push(t3t3);
    }
    for (name, (target, series)) in ["tr_xi", "tr_v", "t1t2", "t1t1", "t3t3"]
        .iter()
        .zip(targets.iter().zip(&draws))
    {
        let mean = crate::stats::mean(series);
        let se = (crate::stats::sample_variance(series) / seeds as f64).sqrt();
        assert!(
            (mean - target).abs() <= 3.0 * se.max(1e-12),
            "{name}: projected mean {mean} vs {target} (se {se})"
        );
    }
}

#[test]
fn mismatched_packs_are_rejected() {
    let (net, x, y) = test_dataset(40, 37, 1.0);
    let theta = Theta::new(0.2, vec![0.1, 0.1]);
    let (part, shards) = shards_for(&net, &x, &y, 2, 23);
    let factors: Vec<WorkerFactors> = shards
        .iter()
        .map(|s| build_factors(s, &theta).unwrap())
        .collect();
    let (r1a, r2a) = make_projectors(40, 5, 1, false);
    let (r1b, r2b) = make_projectors(40, 5, 2, false);
    let packs = vec![
        build_pack(&factors[0], &r1a, &r2a).unwrap(),
        build_pack(&factors[1], &r1b, &r2b).unwrap(),
    ];
    let plugins = estimate_plugins(&theta, &net, &y, &x);
    assert!(matches!(
        sigma1_projected(&packs, &part.alphas(), &plugins, CrossBlockSign::default()),
        Err(Error::Protocol(_))
    ));
}

#[test]
fn pack_byte_size_formula() {
    let (net, x, y) = test_dataset(50, 41, 1.0);
    let theta = Theta::new(0.2, vec![0.3, 0.3]);
    let (_, shards) = shards_for(&net, &x, &y, 2, 29);
    let f = build_factors(&shards[0], &theta).unwrap();
    let d = 7;
    let (r1, r2) = make_projectors(50, d, 3, false);
    let pack = build_pack(&f, &r1, &r2).unwrap();
    let expected = 4 + 8 + 4 + 4 + 8 + 1 + 8 + 8 + (4 * d * d + 2 * d + 2 * d) * 8;
    assert_eq!(pack.byte_size, expected);
    assert_eq!(pack.byte_size, pack.encode().len());
}

#[test]
fn sandwich_identity_case() {
    let eye = DMatrix::identity(3, 3);
    let cov = sandwich(&eye, &eye, 100, CovarianceMode::Exact, None).unwrap();
    assert!((&cov.covariance - DMatrix::identity(3, 3) / 100.0).abs().max() < 1e-14);
}

#[test]
fn sandwich_matches_dense_oracle() {
    let (net, x, y) = test_dataset(60, 43, 1.0);
    let theta = Theta::new(0.3, vec![0.2, 0.2]);
    let (part, shards) = shards_for(&net, &x, &y, 3, 31);
    let plugins = estimate_plugins(&theta, &net, &y, &x);
    let factors: Vec<WorkerFactors> = shards
        .iter()
        .map(|s| build_factors(s, &theta).unwrap())
        .collect();
    let sigma1 =
        sigma1_exact(&factors, &part.alphas(), &plugins, CrossBlockSign::default()).unwrap();
    let mut sigma2 = DMatrix::zeros(3, 3);
    for (shard, &a) in shards.iter().zip(part.alphas().iter()) {
        let eval = crate::lse::eval_objective(shard, &theta, 2).unwrap();
        sigma2 += eval.hessian.unwrap() * a;
    }
    let ours = sandwich(&sigma1, &sigma2, 60, CovarianceMode::Exact, None).unwrap();
    let dense = oracle::dense_sandwich(&sigma1, &sigma2, 60);
    assert!((&ours.covariance - &dense).abs().max() <= 1e-8);
}

#[test]
fn negative_variance_is_an_error() {
    let mut sigma1 = DMatrix::identity(2, 2);
    sigma1[(0, 0)] = -1.0;
    let sigma2 = DMatrix::identity(2, 2);
    assert!(matches!(
        sandwich(&sigma1, &sigma2, 10, CovarianceMode::Projected, Some(3)),
        Err(Error::NegativeVariance { .. })
    ));
}

#[test]
fn confidence_interval_reference_values() {
    let theta = Theta::new(0.0, vec![]);
    let cov = SandwichCovariance {
        sigma1_hat: DMatrix::identity(1, 1),
        sigma2_hat: DMatrix::identity(1, 1),
        covariance: DMatrix::from_element(1, 1, 0.01),
        mode: CovarianceMode::Exact,
        proj_dim: None,
    };
    let cis = confidence_intervals(&theta, &cov, 0.95).unwrap();
    assert!((cis[0].lower + 0.1959964).abs() < 1e-6);
    assert!((cis[0].upper - 0.1959964).abs() < 1e-6);

    let degenerate = confidence_intervals(&theta, &cov, 0.0).unwrap();
    assert_eq!(degenerate[0].lower, 0.0);
    assert_eq!(degenerate[0].upper, 0.0);
}
