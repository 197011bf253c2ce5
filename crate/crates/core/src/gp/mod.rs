//! Rational quadratic ARD kernel and exact Gaussian process inference.
//!
//! All inference here is zero prior mean. [`GpModel`] standardizes the
//! training labels before conditioning and maps predictions back, so the
//! signal and noise variances in [`Hyperparameters`] are always expressed in
//! standardized label units.

mod features;
pub(crate) mod kernel;
pub(crate) mod linalg;
mod posterior;

pub use features::FeatureMatrix;
pub use kernel::{cross_kernel, kernel_matrix, rq_kernel, Hyperparameters, KernelMatrix};
pub use linalg::{cholesky_with_jitter, JitteredCholesky};
pub use posterior::{
    conditional_variance, entropy, posterior, GpModel, LabelScaler, PoolCovariance, Posterior,
    DENSE_POOL_LIMIT,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),

    #[error("covariance of {size} observed points is numerically degenerate (Cholesky failed with jitter up to {max_jitter:e})")]
    Degenerate { size: usize, max_jitter: f64 },

    #[error("negative variance {value:e} at point {index}")]
    NegativeVariance { index: usize, value: f64 },

    #[error("entropy requires a positive variance, got {0:e}")]
    NonPositiveVariance(f64),

    #[error("training set has {x} inputs but {y} labels")]
    LengthMismatch { x: usize, y: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}
