//! Active learning for Gaussian process regression.
//!
//! The crate is organised around the pieces of a pool-based active learning
//! loop:
//!
//! * [`gp`]: rational quadratic ARD kernel and exact posterior inference.
//! * [`mle`]: hyperparameter estimation by marginal likelihood.
//! * [`selectors`]: random, ALM, greedy mutual information, MI with local
//!   kernels (MI-LK) and MI with adaptive local kernels (MI-ALK), plus the
//!   sequential [`selectors::ActiveSession`] that drives them.
//! * [`boucwen`]: the nonlinear SDOF benchmark dataset generator.
//! * [`dataset`]: CSV ingestion, standardization and pool splits.
//! * [`metrics`]: SMSE, CC, AUC and the representativeness distributions.
//! * [`harness`]: seeded multi-realization experiment runner.

// `!(x > 0.0)` is used on purpose so NaN is rejected together with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boucwen;
pub mod dataset;
pub mod gp;
pub mod harness;
pub mod metrics;
pub mod mle;
pub mod rng;
pub mod selectors;

pub use dataset::{Dataset, Pool};
pub use gp::{FeatureMatrix, GpError, GpModel, Hyperparameters, Posterior, PoolCovariance};
pub use mle::{MleOptions, MleResult};
pub use selectors::{ActiveSession, SelectorConfig, SessionConfig, Strategy};
