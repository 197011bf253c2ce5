//! Pool-based sample selection.
//!
//! Every selector works on a [`PoolCovariance`] built from the current
//! hyperparameters and returns the next pool index to label. All argmax
//! operations break ties by the lowest pool index.

mod neighborhood;
mod scores;
mod session;

pub use neighborhood::{neighborhood, Neighborhood, Truncation};
pub use scores::{mi_score, select_alm, select_mi, select_mi_alk_step, select_mi_lk, Pick};
pub use session::{
    run_active_loop, ActiveSession, LoopError, LoopOptions, Oracle, OracleError, PoolOracle,
    PoolPrediction, SelectionTrace, SessionConfig, StepRecord,
};

pub use crate::dataset::Pool;
pub use crate::gp::PoolCovariance;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::GpError;
use crate::mle::MleError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "RND", alias = "rnd", alias = "random")]
    Random,
    #[serde(rename = "ALM", alias = "alm")]
    Alm,
    #[serde(rename = "MI", alias = "mi")]
    Mi,
    #[serde(rename = "MI-LK", alias = "mi-lk", alias = "milk")]
    MiLk,
    #[serde(rename = "MI-ALK", alias = "mi-alk", alias = "mialk")]
    MiAlk,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "RND",
            Strategy::Alm => "ALM",
            Strategy::Mi => "MI",
            Strategy::MiLk => "MI-LK",
            Strategy::MiAlk => "MI-ALK",
        }
    }

    /// Strategies whose picks depend on the current hyperparameters.
    pub fn uses_current_theta(self) -> bool {
        matches!(self, Strategy::Alm | Strategy::Mi | Strategy::MiAlk)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = SelectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| SelectError::InvalidConfig(format!("unknown strategy {s:?}")))
    }
}

/// Strategy and truncation parameters.
///
/// `epsilon` is an absolute covariance threshold for MI-LK and a fraction of
/// the autocovariance in `[0, 1]` for MI-ALK; other strategies ignore it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorConfig {
    pub strategy: Strategy,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_d")]
    pub d: usize,
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_d() -> usize {
    50
}

impl SelectorConfig {
    pub fn new(strategy: Strategy, epsilon: f64, d: usize, budget: usize, seed: u64) -> Self {
        Self {
            strategy,
            epsilon,
            d,
            budget,
            seed,
        }
    }

    pub fn validate(&self, pool_size: usize) -> Result<(), SelectError> {
        if pool_size < 2 {
            return Err(SelectError::InvalidConfig(format!(
                "pool must hold at least 2 points, got {pool_size}"
            )));
        }
        if self.d == 0 {
            return Err(SelectError::InvalidConfig("neighbor cap d must be ≥ 1".into()));
        }
        if self.budget >= pool_size {
            return Err(SelectError::InvalidConfig(format!(
                "budget {} must be smaller than the pool size {pool_size}",
                self.budget
            )));
        }
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(SelectError::InvalidConfig(format!(
                "epsilon must be a non-negative number, got {}",
                self.epsilon
            )));
        }
        if self.strategy == Strategy::MiAlk && self.epsilon > 1.0 {
            return Err(SelectError::InvalidConfig(format!(
                "MI-ALK epsilon is a fraction in [0, 1], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SelectError {
    #[error(transparent)]
    Gp(#[from] GpError),

    #[error(transparent)]
    Mle(#[from] MleError),

    #[error("pool exhausted: every point is already observed")]
    PoolExhausted,

    #[error("budget of {0} labels exhausted")]
    BudgetExhausted(usize),

    #[error("invalid selector configuration: {0}")]
    InvalidConfig(String),

    #[error("point {0} is outside the pool")]
    UnknownPoint(usize),

    #[error("point {0} is already observed")]
    AlreadyObserved(usize),

    #[error("label for point {index} is not finite ({value})")]
    NonFiniteLabel { index: usize, value: f64 },

    #[error("degenerate pool: conditional variance of point {0} given its neighborhood is zero")]
    DegeneratePool(usize),

    #[error("score of point {0} is not a number")]
    NanScore(usize),

    #[error(transparent)]
    Oracle(#[from] OracleError),
}
