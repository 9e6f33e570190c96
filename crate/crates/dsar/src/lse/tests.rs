use nalgebra::DVector;

use super::*;
use crate::mat::RowMatrix;
use crate::network::{build_shard, partition_uniform, row_normalize, CsrMatrix, WorkerShard};
use crate::oracle;
use crate::synth::{gen_covariates, gen_noise, synth_response, NoiseModel, TrueModel};

fn dataset(
    n: usize,
    p_edge: f64,
    rho0: f64,
    beta0: &[f64],
    sigma: f64,
    seed: u64,
) -> (crate::network::SparseNetwork, RowMatrix, Vec<f64>) {
    let net = oracle::random_net(n, p_edge, seed);
    let x = gen_covariates(n, beta0.len(), seed);
    let eps = gen_noise(&NoiseModel::IidGaussian { sigma }, n, seed).unwrap();
    let model = TrueModel {
        rho0,
        beta0: beta0.to_vec(),
        noise: NoiseModel::IidGaussian { sigma },
    };
    let y = synth_response(&net, &x, &model, &eps).unwrap();
    (net, x, y)
}

fn single_shard(
    net: &crate::network::SparseNetwork,
    x: &RowMatrix,
    y: &[f64],
) -> WorkerShard {
    let part = partition_uniform(net.n_nodes(), 1, 0).unwrap();
    build_shard(net, &part, y, x, 0).unwrap()
}

#[test]
fn ds_diag_at_zero_rho_is_identity() {
    let ds = DsDiag::new(0.0);
    assert_eq!(ds.d(3.7), 1.0);
    assert_eq!(ds.d_dot(3.7), 0.0);
}

#[test]
fn ds_diag_on_two_cycle() {
    // 2-cycle: dtilde_i = 1, so D_ii = 1/(1 + 0.25) = 0.8 at rho = 0.5.
    let a = CsrMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
    let net = row_normalize(a).unwrap();
    let ds = DsDiag::new(0.5);
    for i in 0..2 {
        assert!((ds.d(net.col_sq_sums()[i]) - 0.8).abs() < 1e-15);
    }
}

#[test]
fn ds_diag_matches_dense_formulas() {
    let net = oracle::random_net(30, 0.15, 17);
    let rho = 0.4;
    let ds = DsDiag::new(rho);
    let dense_d = oracle::dense_d_diag(&net, rho);
    for i in 0..30 {
        assert!((ds.d(net.col_sq_sums()[i]) - dense_d[i]).abs() < 1e-12);
    }
    // S applied to a test vector vs dense.
    let s = oracle::dense_s(&net, rho);
    let v: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).sin()).collect();
    let mut wv = vec![0.0; 30];
    net.weights().mul_vec(&v, &mut wv);
    let dense_sv = &s * DVector::from_column_slice(&v);
    for i in 0..30 {
        assert!((v[i] - rho * wv[i] - dense_sv[i]).abs() < 1e-12);
    }
}

#[test]
fn f_local_at_zero_rho_is_plain_residual() {
    let (net, x, y) = dataset(40, 0.1, 0.3, &[0.5, -0.2], 1.0, 3);
    let shard = single_shard(&net, &x, &y);
    let theta = Theta::new(0.0, vec![0.7, 0.1]);
    let f = eval_f_local(&shard, &theta).unwrap();
    for (i, &g) in shard.local_nodes().iter().enumerate() {
        let xb: f64 = x
            .row(g as usize)
            .iter()
            .zip(&theta.beta)
            .map(|(a, b)| a * b)
            .sum();
        assert!((f[i] - (y[g as usize] - xb)).abs() < 1e-12);
    }
}

#[test]
fn f_local_matches_dense_full_network() {
    let (net, x, y) = dataset(100, 0.06, 0.4, &[0.2, 0.4, 0.6], 1.0, 5);
    let shard = single_shard(&net, &x, &y);
    let theta = Theta::new(0.35, vec![0.1, 0.3, 0.5]);
    let f = eval_f_local(&shard, &theta).unwrap();
    let dense = oracle::dense_f(&net, &y, &x, theta.rho, &theta.beta);
    let mut max_diff = 0.0f64;
    for (i, &g) in shard.local_nodes().iter().enumerate() {
        max_diff = max_diff.max((f[i] - dense[g as usize]).abs());
    }
    assert!(max_diff <= 1e-10, "max |diff| = {max_diff}");
}

#[test]
fn f_local_matches_dense_across_shards() {
    let (net, x, y) = dataset(80, 0.08, 0.4, &[1.0, -0.5], 1.0, 8);
    let part = partition_uniform(80, 4, 1).unwrap();
    let theta = Theta::new(-0.25, vec![0.4, 0.2]);
    let dense = oracle::dense_f(&net, &y, &x, theta.rho, &theta.beta);
    for k in 0..4 {
        let shard = build_shard(&net, &part, &y, &x, k).unwrap();
        let f = eval_f_local(&shard, &theta).unwrap();
        for (i, &g) in shard.local_nodes().iter().enumerate() {
            assert!((f[i] - dense[g as usize]).abs() <= 1e-10);
        }
    }
}

#[test]
fn noiseless_f_vanishes_at_truth() {
    let (net, x, y) = dataset(60, 0.08, 0.4, &[0.2, 0.4], 0.0, 9);
    let shard = single_shard(&net, &x, &y);
    let f = eval_f_local(&shard, &Theta::new(0.4, vec![0.2, 0.4])).unwrap();
    assert!(f.iter().all(|&v| v.abs() < 1e-9));
}

#[test]
fn objective_at_zero_rho_minimized_by_ols() {
    let (net, x, y) = dataset(70, 0.1, 0.0, &[0.5, -1.0], 0.5, 11);
    let shard = single_shard(&net, &x, &y);

    // OLS on the shard rows.
    let mut xtx = nalgebra::DMatrix::<f64>::zeros(2, 2);
    let mut xty = DVector::<f64>::zeros(2);
    for (i, yi) in y.iter().enumerate() {
        let xi = x.row(i);
        for a in 0..2 {
            xty[a] += xi[a] * yi;
            for b in 0..2 {
                xtx[(a, b)] += xi[a] * xi[b];
            }
        }
    }
    let ols = xtx.lu().solve(&xty).unwrap();

    // Gradient of Q in beta at (rho = 0, ols) vanishes.
    let eval = eval_objective(
        &shard,
        &Theta::new(0.0, ols.iter().copied().collect()),
        1,
    )
    .unwrap();
    let grad = eval.gradient.unwrap();
    assert!(grad[1].abs() < 1e-10 && grad[2].abs() < 1e-10);
}

#[test]
fn gradient_matches_finite_differences() {
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let n = 60 + (seed as usize % 4) * 10;
        let (net, x, y) = dataset(n, 0.09, 0.3, &[0.4, -0.6], 1.0, 100 + seed);
        let shard = single_shard(&net, &x, &y);
        let mut rng = crate::rng::seed_rng(7000 + seed);
        use rand::Rng;
        let theta = Theta::new(
            rng.random_range(-0.7..0.7),
            vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        );

        let eval = eval_objective(&shard, &theta, 1).unwrap();
        let grad = eval.gradient.unwrap();
        let at = [theta.rho, theta.beta[0], theta.beta[1]];
        let fd = oracle::fd_gradient(
            |v| {
                eval_objective(&shard, &Theta::new(v[0], v[1..].to_vec()), 0)
                    .unwrap()
                    .value
            },
            &at,
            1e-6,
        );
        for j in 0..3 {
            let denom = fd[j].abs().max(1e-3);
            worst = worst.max((grad[j] - fd[j]).abs() / denom);
        }
    }
    assert!(worst <= 1e-5, "worst relative gradient error {worst}");
}

#[test]
fn hessian_matches_finite_differences() {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let (net, x, y) = dataset(80, 0.08, 0.35, &[0.5, 0.2], 1.0, 300 + seed);
        let shard = single_shard(&net, &x, &y);
        let theta = Theta::new(0.25, vec![0.3, -0.4]);
        let eval = eval_objective(&shard, &theta, 2).unwrap();
        let hess = eval.hessian.unwrap();
        let at = [theta.rho, theta.beta[0], theta.beta[1]];
        let fd = oracle::fd_hessian(
            |v| {
                eval_objective(&shard, &Theta::new(v[0], v[1..].to_vec()), 0)
                    .unwrap()
                    .value
            },
            &at,
            1e-4,
        );
        for i in 0..3 {
            for j in 0..3 {
                let denom = fd[(i, j)].abs().max(1e-2);
                worst = worst.max((hess[(i, j)] - fd[(i, j)]).abs() / denom);
            }
        }
    }
    assert!(worst <= 1e-4, "worst relative Hessian error {worst}");
}

#[test]
fn hessian_is_symmetric() {
    let (net, x, y) = dataset(50, 0.1, 0.3, &[0.2, 0.4, -0.3], 1.0, 21);
    let shard = single_shard(&net, &x, &y);
    let eval = eval_objective(&shard, &Theta::new(0.4, vec![0.1, 0.2, 0.3]), 2).unwrap();
    let h = eval.hessian.unwrap();
    for i in 0..4 {
        for j in 0..4 {
            assert!((h[(i, j)] - h[(j, i)]).abs() < 1e-10);
        }
    }
}

#[test]
fn objective_is_nonnegative_and_matches_dense() {
    let (net, x, y) = dataset(90, 0.07, 0.4, &[0.3, 0.7], 1.0, 31);
    let shard = single_shard(&net, &x, &y);
    for rho in [-0.6, 0.0, 0.5] {
        let theta = Theta::new(rho, vec![0.25, -0.4]);
        let eval = eval_objective(&shard, &theta, 0).unwrap();
        assert!(eval.value >= 0.0);
        let all: Vec<u32> = (0..90).collect();
        let dense = oracle::dense_objective(&net, &y, &x, rho, &theta.beta, &all);
        assert!(
            (eval.value - dense).abs() <= 1e-10 * dense.max(1.0),
            "shard {} vs dense {}",
            eval.value,
            dense
        );
    }
}

#[test]
fn scale_equivariance_of_objective_and_argmin() {
    let (net, x, y) = dataset(70, 0.1, 0.3, &[0.5, -0.8], 1.0, 41);
    let c = 3.5f64;
    let yc: Vec<f64> = y.iter().map(|v| c * v).collect();
    let mut xc = RowMatrix::zeros(70, 2);
    for i in 0..70 {
        for j in 0..2 {
            xc.row_mut(i)[j] = c * x.row(i)[j];
        }
    }
    let shard = single_shard(&net, &x, &y);
    let shard_c = single_shard(&net, &xc, &yc);

    // Q(rho, beta; c y, c X) = c^2 Q(rho, beta; y, X).
    let theta = Theta::new(0.2, vec![0.4, 0.1]);
    let q = eval_objective(&shard, &theta, 0).unwrap().value;
    let qc = eval_objective(&shard_c, &theta, 0).unwrap().value;
    assert!((qc - c * c * q).abs() < 1e-9 * qc.max(1.0));

    // Same argmin under re-optimization.
    let opts = SolverOptions::default();
    let (fit, _) = fit_local(&shard, None, &opts).unwrap();
    let (fit_c, _) = fit_local(&shard_c, None, &opts).unwrap();
    assert!(fit.theta_hat.max_abs_diff(&fit_c.theta_hat) <= 1e-6);
}

#[test]
fn fit_recovers_noiseless_truth() {
    let (net, x, y) = dataset(100, 0.07, 0.4, &[0.2, 0.4], 0.0, 51);
    let shard = single_shard(&net, &x, &y);
    let (fit, report) = fit_local(&shard, None, &SolverOptions::default()).unwrap();
    assert!(report.converged);
    let truth = Theta::new(0.4, vec![0.2, 0.4]);
    assert!(
        fit.theta_hat.max_abs_diff(&truth) <= 1e-6,
        "fit {:?}",
        fit.theta_hat
    );
}

#[test]
fn fit_matches_dense_profile_oracle() {
    let (net, x, y) = dataset(100, 0.08, 0.4, &[0.5, -0.3], 1.0, 61);
    let shard = single_shard(&net, &x, &y);
    let (fit, _) = fit_local(&shard, None, &SolverOptions::default()).unwrap();
    let all: Vec<u32> = (0..100).collect();
    let (rho_star, beta_star) =
        oracle::dense_profile_fit(&net, &y, &x, &all, -0.99, 0.99);
    assert!(
        (fit.theta_hat.rho - rho_star).abs() <= 1e-6,
        "rho {} vs oracle {}",
        fit.theta_hat.rho,
        rho_star
    );
    for (ours, oracle) in fit.theta_hat.beta.iter().zip(&beta_star) {
        assert!((ours - oracle).abs() <= 1e-6);
    }
}

#[test]
fn fitted_hessian_is_positive_semidefinite() {
    let (net, x, y) = dataset(120, 0.06, 0.3, &[0.4, 0.2], 1.0, 71);
    let shard = single_shard(&net, &x, &y);
    let (fit, _) = fit_local(&shard, None, &SolverOptions::default()).unwrap();
    let eig = fit.hessian_at_opt.clone().symmetric_eigen();
    assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-8));
}

#[test]
fn one_step_is_stationary_at_minimizer() {
    let (net, x, y) = dataset(90, 0.08, 0.35, &[0.6, -0.2], 1.0, 81);
    let shard = single_shard(&net, &x, &y);
    let (fit, _) = fit_local(&shard, None, &SolverOptions::default()).unwrap();
    let refined = one_newton_step(&shard, &fit.theta_hat).unwrap();
    assert!(refined.max_abs_diff(&fit.theta_hat) <= 1e-8);
}

#[test]
fn newton_solves_quadratic_beta_block_in_one_step() {
    // At fixed rho the objective is exactly quadratic in beta: a single
    // beta-block Newton step from any start lands on the profile minimizer.
    let (net, x, y) = dataset(60, 0.1, 0.3, &[0.4, 0.8], 1.0, 91);
    let shard = single_shard(&net, &x, &y);
    let rho = 0.2;
    let start = Theta::new(rho, vec![5.0, -7.0]);
    let eval = eval_objective(&shard, &start, 2).unwrap();
    let grad = eval.gradient.unwrap();
    let hess = eval.hessian.unwrap();
    let hbb = hess.view((1, 1), (2, 2)).into_owned();
    let gb = DVector::from_column_slice(&[grad[1], grad[2]]);
    let delta = hbb.lu().solve(&(-gb)).unwrap();
    let next = Theta::new(rho, vec![start.beta[0] + delta[0], start.beta[1] + delta[1]]);
    let check = eval_objective(&shard, &next, 1).unwrap();
    let g = check.gradient.unwrap();
    assert!(g[1].abs() < 1e-9 && g[2].abs() < 1e-9);
}

#[test]
fn one_step_contracts_near_optimum() {
    let (net, x, y) = dataset(500, 0.02, 0.4, &[0.3, 0.5], 1.0, 101);
    let shard = single_shard(&net, &x, &y);
    let (fit, _) = fit_local(&shard, None, &SolverOptions::default()).unwrap();
    let opt = fit.theta_hat.as_dvector();
    let mut at = fit.theta_hat.clone();
    at.rho += 0.05;
    at.beta[0] -= 0.08;
    let before = (at.as_dvector() - &opt).norm();
    let refined = one_newton_step(&shard, &at).unwrap();
    let after = (refined.as_dvector() - &opt).norm();
    assert!(after < before, "one-step did not contract: {after} vs {before}");
}

#[test]
fn singular_hessian_is_reported() {
    // Single node, two covariates: the 3x3 Hessian cannot have full rank.
    let a = CsrMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
    let net = row_normalize(a).unwrap();
    let part = crate::network::Partition::from_assignments(vec![0, 1], 2).unwrap();
    let mut x = RowMatrix::zeros(2, 2);
    x.row_mut(0).copy_from_slice(&[1.0, 2.0]);
    x.row_mut(1).copy_from_slice(&[0.5, 1.0]);
    let y = vec![1.0, 2.0];
    let shard = build_shard(&net, &part, &y, &x, 0).unwrap();
    let res = one_newton_step(&shard, &Theta::new(0.1, vec![0.0, 0.0]));
    assert!(matches!(res, Err(Error::SingularHessian { .. })));
}

#[test]
fn dimension_mismatch_is_rejected() {
    let (net, x, y) = dataset(20, 0.15, 0.2, &[0.1], 1.0, 201);
    let shard = single_shard(&net, &x, &y);
    assert!(eval_f_local(&shard, &Theta::new(0.0, vec![0.0, 0.0])).is_err());
    assert!(eval_objective(&shard, &Theta::new(0.0, vec![0.0]), 3).is_err());
}

#[test]
fn summary_byte_size_matches_encoding() {
    let (net, x, y) = dataset(30, 0.12, 0.2, &[0.3, 0.1], 1.0, 211);
    let shard = single_shard(&net, &x, &y);
    let (fit, _) = fit_local(&shard, None, &SolverOptions::default()).unwrap();
    assert_eq!(fit.byte_size, fit.encode().len());
    // 4 + 8 + 4 + 8 rho + 16 beta + 72 hessian + 8 sigma2.
    assert_eq!(fit.byte_size, 4 + 8 + 4 + 8 + 16 + 72 + 8);
}
