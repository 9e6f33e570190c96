use nalgebra::DMatrix;

use super::*;
use crate::lse::SolverOptions;
use crate::mat::RowMatrix;
use crate::network::partition_uniform;
use crate::oracle;
use crate::synth::{gen_covariates, gen_noise, synth_response, NoiseModel, TrueModel};

fn summary(worker: usize, theta: Theta, hessian: DMatrix<f64>, n: usize) -> LocalSummary {
    LocalSummary::new(worker, theta, hessian, n, 1.0)
}

fn test_dataset(
    n: usize,
    seed: u64,
) -> (crate::network::SparseNetwork, RowMatrix, Vec<f64>) {
    let net = oracle::random_net(n, 0.08, seed);
    let x = gen_covariates(n, 2, seed);
    let eps = gen_noise(&NoiseModel::standard_gaussian(), n, seed).unwrap();
    let model = TrueModel {
        rho0: 0.4,
        beta0: vec![0.5, -0.3],
        noise: NoiseModel::standard_gaussian(),
    };
    let y = synth_response(&net, &x, &model, &eps).unwrap();
    (net, x, y)
}

#[test]
fn os_single_summary_is_identity() {
    let s = summary(0, Theta::new(0.3, vec![1.0]), DMatrix::identity(2, 2), 10);
    let agg = aggregate_os(std::slice::from_ref(&s)).unwrap();
    assert_eq!(agg.theta, s.theta_hat);
    assert_eq!(agg.rounds_used, 1);
    assert!(agg.sigma2_hat.is_none());
}

#[test]
fn os_is_arithmetic_mean() {
    let s1 = summary(0, Theta::new(0.3, vec![1.0]), DMatrix::identity(2, 2), 10);
    let s2 = summary(1, Theta::new(0.5, vec![0.0]), DMatrix::identity(2, 2), 10);
    let agg = aggregate_os(&[s1, s2]).unwrap();
    assert!((agg.theta.rho - 0.4).abs() < 1e-15);
    assert!((agg.theta.beta[0] - 0.5).abs() < 1e-15);
}

#[test]
fn os_empty_list_errors() {
    assert!(aggregate_os(&[]).is_err());
}

#[test]
fn wlse_with_identical_hessians_is_weighted_mean() {
    let h = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
    let s1 = summary(0, Theta::new(0.2, vec![1.0]), h.clone(), 10);
    let s2 = summary(1, Theta::new(0.6, vec![3.0]), h.clone(), 30);
    let agg = aggregate_wlse(&[s1, s2], &[0.25, 0.75]).unwrap();
    assert!((agg.theta.rho - (0.25 * 0.2 + 0.75 * 0.6)).abs() < 1e-12);
    assert!((agg.theta.beta[0] - (0.25 * 1.0 + 0.75 * 3.0)).abs() < 1e-12);
}

#[test]
fn wlse_hand_built_two_worker_example() {
    // H1 = 2I, H2 = I, alpha = (1/2, 1/2), theta1 = (1,0), theta2 = (0,1):
    // pooled = 1.5 I, rhs = (1, 0.5) -> theta_w = (2/3, 1/3).
    let s1 = summary(0, Theta::new(1.0, vec![0.0]), DMatrix::identity(2, 2) * 2.0, 10);
    let s2 = summary(1, Theta::new(0.0, vec![1.0]), DMatrix::identity(2, 2), 10);
    let agg = aggregate_wlse(&[s1, s2], &[0.5, 0.5]).unwrap();
    assert!((agg.theta.rho - 2.0 / 3.0).abs() < 1e-12);
    assert!((agg.theta.beta[0] - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn wlse_stationarity_identity() {
    // sum_k alpha_k H_k (theta_w - theta_k) = 0.
    let h1 = DMatrix::from_row_slice(2, 2, &[4.0, 0.5, 0.5, 1.0]);
    let h2 = DMatrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 2.0]);
    let s1 = summary(0, Theta::new(0.8, vec![-1.0]), h1.clone(), 10);
    let s2 = summary(1, Theta::new(-0.2, vec![2.0]), h2.clone(), 30);
    let alphas = [0.25, 0.75];
    let agg = aggregate_wlse(&[s1.clone(), s2.clone()], &alphas).unwrap();
    let w = agg.theta.as_dvector();
    let mut resid = nalgebra::DVector::zeros(2);
    for (s, a) in [s1, s2].iter().zip(alphas) {
        resid += (&s.hessian_at_opt * (&w - s.theta_hat.as_dvector())) * a;
    }
    assert!(resid.amax() < 1e-8, "stationarity residual {resid}");
}

#[test]
fn wlse_singular_pooled_hessian_fails_loudly() {
    let h = DMatrix::zeros(2, 2);
    let s1 = summary(0, Theta::new(0.1, vec![0.0]), h.clone(), 10);
    let s2 = summary(1, Theta::new(0.2, vec![0.0]), h, 10);
    assert!(matches!(
        aggregate_wlse(&[s1, s2], &[0.5, 0.5]),
        Err(Error::SingularHessian { .. })
    ));
}

#[test]
fn wlse_rejects_bad_weights() {
    let s = summary(0, Theta::new(0.1, vec![0.0]), DMatrix::identity(2, 2), 10);
    assert!(aggregate_wlse(std::slice::from_ref(&s), &[0.4]).is_err());
}

#[test]
fn pipeline_wlse_message_protocol() {
    let (net, x, y) = test_dataset(80, 1);
    let part = partition_uniform(80, 4, 2).unwrap();
    let opts = PipelineOptions::estimate_only(Method::Wlse);
    let res = run_pipeline(&net, &y, &x, &part, &opts).unwrap();
    assert_eq!(res.messages.len(), 4);
    assert!(res
        .messages
        .iter()
        .all(|m| m.kind == PayloadKind::LocalSummary && m.round == 1));
    assert_eq!(res.estimate.rounds_used, 1);
    assert_eq!(
        res.estimate.total_bytes,
        res.messages.iter().map(|m| m.payload_bytes).sum::<usize>()
    );
}

#[test]
fn pipeline_twlse_message_protocol() {
    let (net, x, y) = test_dataset(80, 3);
    let part = partition_uniform(80, 4, 2).unwrap();
    let opts = PipelineOptions::estimate_only(Method::Twlse);
    let res = run_pipeline(&net, &y, &x, &part, &opts).unwrap();
    // K summaries + K broadcasts + K refined summaries.
    assert_eq!(res.messages.len(), 12);
    assert_eq!(res.estimate.rounds_used, 2);
    let by_round: Vec<usize> = [1, 2]
        .iter()
        .map(|&r| res.messages.iter().filter(|m| m.round == r).count())
        .collect();
    assert_eq!(by_round, vec![4, 8]);
    assert_eq!(res.estimate.total_bytes, res.total_message_bytes());
}

#[test]
fn pipeline_is_deterministic() {
    let (net, x, y) = test_dataset(100, 5);
    let part = partition_uniform(100, 5, 7).unwrap();
    let mut opts = PipelineOptions::estimate_only(Method::Twlse);
    opts.inference = InferenceSettings::Projected {
        d: 5,
        seed: 11,
        sparse: false,
        level: 0.95,
    };
    let a = run_pipeline(&net, &y, &x, &part, &opts).unwrap();
    let b = run_pipeline(&net, &y, &x, &part, &opts).unwrap();
    assert_eq!(a.estimate.theta, b.estimate.theta);
    assert_eq!(a.total_message_bytes(), b.total_message_bytes());
    let ca = &a.inference.as_ref().unwrap().covariance.covariance;
    let cb = &b.inference.as_ref().unwrap().covariance.covariance;
    assert_eq!(ca, cb);
}

#[test]
fn single_worker_wlse_equals_twlse_equals_global_fit() {
    let (net, x, y) = test_dataset(90, 9);
    let part = partition_uniform(90, 1, 0).unwrap();
    let wlse = run_pipeline(&net, &y, &x, &part, &PipelineOptions::estimate_only(Method::Wlse))
        .unwrap();
    let twlse = run_pipeline(
        &net,
        &y,
        &x,
        &part,
        &PipelineOptions::estimate_only(Method::Twlse),
    )
    .unwrap();
    assert!(wlse.estimate.theta.max_abs_diff(&twlse.estimate.theta) <= 1e-8);

    let shard = crate::network::build_shard(&net, &part, &y, &x, 0).unwrap();
    let (local, _) = crate::lse::fit_local(&shard, None, &SolverOptions::default()).unwrap();
    assert!(wlse.estimate.theta.max_abs_diff(&local.theta_hat) <= 1e-10);
}

#[test]
fn twlse_at_exact_minimizer_is_fixed_point() {
    // K = 1: the weighted first pass is already the exact minimizer, so the
    // refinement is a no-op.
    let (net, x, y) = test_dataset(70, 13);
    let part = partition_uniform(70, 1, 1).unwrap();
    let shards = build_all_shards(&net, &part, &y, &x).unwrap();
    let opts = PipelineOptions::estimate_only(Method::Wlse);
    let first = run_on_shards(&shards, &part.alphas(), &opts).unwrap();
    let (refined, messages) = run_twlse(&shards, &part.alphas(), &first.estimate).unwrap();
    assert!(refined.theta.max_abs_diff(&first.estimate.theta) <= 1e-8);
    assert_eq!(messages.len(), 2); // broadcast + refined summary
}

#[test]
fn os_with_inference_is_rejected() {
    let (net, x, y) = test_dataset(60, 17);
    let part = partition_uniform(60, 3, 1).unwrap();
    let mut opts = PipelineOptions::estimate_only(Method::Os);
    opts.inference = InferenceSettings::Exact { level: 0.95 };
    assert!(matches!(
        run_pipeline(&net, &y, &x, &part, &opts),
        Err(Error::InvalidConfig(_))
    ));
}

#[test]
fn inference_pack_bytes_scale_quadratically_in_d() {
    let (net, x, y) = test_dataset(120, 19);
    let part = partition_uniform(120, 4, 3).unwrap();
    let run = |d: usize| -> usize {
        let mut opts = PipelineOptions::estimate_only(Method::Wlse);
        opts.inference = InferenceSettings::Projected {
            d,
            seed: 5,
            sparse: false,
            level: 0.95,
        };
        run_pipeline(&net, &y, &x, &part, &opts)
            .unwrap()
            .inference_bytes()
    };
    let b1 = run(8);
    let b2 = run(16);
    // Dominant 4 d^2 * 8 bytes term quadruples; headers and O(d) terms keep
    // the ratio near but not exactly 4.
    let ratio = b2 as f64 / b1 as f64;
    assert!((3.6..=4.4).contains(&ratio), "byte ratio {ratio}");
}

#[test]
fn message_csv_has_expected_shape() {
    let messages = vec![Message {
        round: 1,
        from: Role::Worker(2),
        to: Role::Master,
        kind: PayloadKind::LocalSummary,
        payload_bytes: 42,
    }];
    let csv = messages_to_csv(&messages);
    assert_eq!(csv, "round,from,to,kind,bytes\n1,worker2,master,local_summary,42\n");
}

#[test]
fn broadcast_encoding_length() {
    let theta = Theta::new(0.4, vec![1.0, 2.0, 3.0]);
    assert_eq!(encode_theta(&theta).len(), 4 + 8 + 24);
}
