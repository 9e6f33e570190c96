//! Distributed estimation and inference for the spatial autoregression (SAR)
//! model on large sparse networks.
//!
//! The model is y = rho W y + X beta + eps with W the row-normalized
//! adjacency. Estimation minimizes a least-squares criterion built from the
//! conditional expectations E{Y_i | Y_{-i}}, which never inverts I - rho W:
//!
//!   Q(theta) = N^{-1} || D S' (S y - X beta) ||^2,
//!   D = (I + rho^2 diag(W'W))^{-1},  S = I - rho W.
//!
//! The crate provides:
//! - [`network`]: sparse graphs, uniform partitioning, self-contained worker
//!   shards carrying first/second-order neighborhood statistics;
//! - [`synth`]: stochastic block / power-law generators and SAR response
//!   synthesis for experiments;
//! - [`lse`]: the local objective with analytic gradient and Hessian plus a
//!   Newton solver;
//! - [`cluster`]: an in-process master-worker runtime with byte-accounted
//!   message passing and one-step / weighted / two-step aggregation;
//! - [`inference`]: plug-in score covariance, random-projection packs, the
//!   sandwich covariance and confidence intervals;
//! - [`harness`]: replication experiments, RMSE/REE/CP metrics, real-data
//!   ingestion and CSV/JSON reporting;
//! - [`oracle`]: dense reference implementations used for validation at
//!   small n.

pub mod audit;
pub mod cluster;
pub mod error;
pub mod harness;
pub mod inference;
pub mod lse;
pub mod mat;
pub mod network;
pub mod oracle;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod wire;

pub use error::{Error, Result};
