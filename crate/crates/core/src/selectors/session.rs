//! The sequential select → label → refit loop.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scores::{select_alm, select_mi, select_mi_alk_step, select_mi_lk, Pick};
use super::{SelectError, SelectorConfig, Strategy};
use crate::gp::{FeatureMatrix, GpModel, Hyperparameters, PoolCovariance};
use crate::mle::{self, MleOptions, MleResult};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub selector: SelectorConfig,
    /// Hyperparameters before any label is seen; MI-LK uses them for its
    /// whole pick order.
    pub theta_init: Hyperparameters,
    #[serde(default)]
    pub mle: MleOptions,
    /// Refit θ by maximum likelihood after accepted labels.
    #[serde(default = "default_true")]
    pub refit: bool,
    /// Refit only when the number of labels is a multiple of this.
    #[serde(default = "default_one")]
    pub refit_every: usize,
    /// Random restarts are added only when the number of labels is a
    /// multiple of this; other refits start from the previous θ alone.
    #[serde(default = "default_one")]
    pub restart_every: usize,
}

fn default_true() -> bool {
    true
}

fn default_one() -> usize {
    1
}

impl SessionConfig {
    pub fn new(selector: SelectorConfig, theta_init: Hyperparameters) -> Self {
        Self {
            selector,
            theta_init,
            mle: MleOptions::default(),
            refit: true,
            refit_every: 1,
            restart_every: 1,
        }
    }
}

/// Per-point prediction under the transductive convention: observed points
/// report their label with zero sd.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolPrediction {
    pub mean: f64,
    pub sd: f64,
    pub observed: bool,
}

/// Result of accepting one label.
#[derive(Debug, Clone, PartialEq)]
pub struct StepUpdate {
    pub step: usize,
    pub refit: Option<MleResult>,
}

/// Projection of the session state under a hypothetical label, θ held fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIf {
    pub index: usize,
    pub label: f64,
    pub recommendation: Option<Pick>,
    pub predictions: Vec<PoolPrediction>,
    /// Current sd minus projected sd, per point.
    pub sd_reduction: Vec<f64>,
    pub mean_sd_reduction: f64,
}

#[derive(Debug, Clone)]
pub struct ActiveSession {
    features: Arc<FeatureMatrix>,
    config: SessionConfig,
    observed: Vec<usize>,
    labels: Vec<f64>,
    mask: Vec<bool>,
    theta: Hyperparameters,
    last_fit: Option<MleResult>,
    /// Covariance under the current θ, for strategies that depend on it.
    cov: Option<Arc<PoolCovariance>>,
    /// Covariance under θ_init, kept for extending the MI-LK order.
    fixed_cov: Option<Arc<PoolCovariance>>,
    order: Vec<Pick>,
    pending: Option<Pick>,
}

impl ActiveSession {
    pub fn new(features: Arc<FeatureMatrix>, config: SessionConfig) -> Result<Self, SelectError> {
        let n = features.rows();
        config.selector.validate(n)?;
        if !features.is_finite() {
            return Err(SelectError::InvalidConfig("pool features must be finite".into()));
        }
        if config.refit_every == 0 {
            return Err(SelectError::InvalidConfig("refit_every must be ≥ 1".into()));
        }
        config.theta_init.check_dim(features.cols())?;
        let sel = config.selector.clone();
        let mut session = Self {
            features: Arc::clone(&features),
            theta: config.theta_init.clone(),
            observed: Vec::new(),
            labels: Vec::new(),
            mask: vec![false; n],
            last_fit: None,
            cov: None,
            fixed_cov: None,
            order: Vec::new(),
            pending: None,
            config,
        };
        match sel.strategy {
            Strategy::Random => {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng::stream(sel.seed));
                session.order = perm.into_iter().map(|index| Pick { index, score: 0.0 }).collect();
            }
            Strategy::MiLk => {
                let cov = Arc::new(PoolCovariance::new(&features, &session.config.theta_init)?);
                session.order = select_mi_lk(&cov, sel.budget, sel.epsilon, sel.d)?;
                session.fixed_cov = Some(cov);
            }
            Strategy::Alm | Strategy::Mi | Strategy::MiAlk => {
                if sel.strategy == Strategy::MiAlk && sel.epsilon >= 1.0 {
                    log::warn!("MI-ALK epsilon {} leaves every neighborhood empty", sel.epsilon);
                }
                session.cov = Some(Arc::new(PoolCovariance::new(&features, &session.theta)?));
            }
        }
        Ok(session)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn features(&self) -> &Arc<FeatureMatrix> {
        &self.features
    }

    pub fn pool_size(&self) -> usize {
        self.features.rows()
    }

    pub fn budget(&self) -> usize {
        self.config.selector.budget
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn is_observed(&self, index: usize) -> bool {
        self.mask.get(index).copied().unwrap_or(false)
    }

    pub fn is_exhausted(&self) -> bool {
        self.observed.len() >= self.budget()
    }

    pub fn theta(&self) -> &Hyperparameters {
        &self.theta
    }

    pub fn last_fit(&self) -> Option<&MleResult> {
        self.last_fit.as_ref()
    }

    pub fn pending(&self) -> Option<Pick> {
        self.pending
    }

    /// The precomputed pick order for RND and MI-LK (empty otherwise).
    pub fn precomputed_order(&self) -> &[Pick] {
        &self.order
    }

    /// Computes the next pick without caching it. `None` once the budget is spent.
    pub fn recommendation(&self) -> Result<Option<Pick>, SelectError> {
        if self.is_exhausted() {
            return Ok(None);
        }
        let sel = &self.config.selector;
        let pick = match sel.strategy {
            Strategy::Random | Strategy::MiLk => self
                .order
                .iter()
                .find(|p| !self.mask[p.index])
                .copied()
                .ok_or(SelectError::PoolExhausted)?,
            Strategy::Alm => select_alm(self.current_cov(), &self.observed)?,
            Strategy::Mi => select_mi(self.current_cov(), &self.observed)?,
            Strategy::MiAlk => select_mi_alk_step(self.current_cov(), &self.observed, sel.epsilon, sel.d)?,
        };
        Ok(Some(pick))
    }

    /// The pending pick, computed on first call and kept until a label arrives.
    pub fn recommend(&mut self) -> Result<Option<Pick>, SelectError> {
        if self.pending.is_none() {
            self.pending = self.recommendation()?;
        }
        Ok(self.pending)
    }

    fn current_cov(&self) -> &PoolCovariance {
        self.cov.as_deref().expect("strategy keeps a current covariance")
    }

    fn check_label(&self, index: usize, label: f64) -> Result<(), SelectError> {
        if index >= self.pool_size() {
            return Err(SelectError::UnknownPoint(index));
        }
        if self.mask[index] {
            return Err(SelectError::AlreadyObserved(index));
        }
        if !label.is_finite() {
            return Err(SelectError::NonFiniteLabel { index, value: label });
        }
        if self.is_exhausted() {
            return Err(SelectError::BudgetExhausted(self.budget()));
        }
        Ok(())
    }

    fn push_label(&mut self, index: usize, label: f64) {
        self.observed.push(index);
        self.labels.push(label);
        self.mask[index] = true;
        self.pending = None;
    }

    /// Accepts a label for any unobserved point and refits θ.
    ///
    /// The refit starts from the previous θ plus `mle.restarts` random starts
    /// (on steps that are multiples of `restart_every`) seeded by the step
    /// number. A failed refit keeps the previous θ.
    pub fn observe(&mut self, index: usize, label: f64) -> Result<StepUpdate, SelectError> {
        self.check_label(index, label)?;
        self.push_label(index, label);
        let step = self.observed.len();

        let mut refit = None;
        if self.config.refit && step >= 2 && step.is_multiple_of(self.config.refit_every) {
            let x_a = self.features.select(&self.observed);
            let restarts = if step.is_multiple_of(self.config.restart_every.max(1)) {
                self.config.mle.restarts
            } else {
                0
            };
            let opts = MleOptions {
                seed: rng::derive(self.config.mle.seed, step as u64),
                restarts,
                ..self.config.mle.clone()
            };
            match mle::fit(&x_a, &self.labels, &self.theta, &opts) {
                Ok(res) => {
                    self.theta = res.theta.clone();
                    self.last_fit = Some(res.clone());
                    refit = Some(res);
                }
                Err(e) => log::warn!("refit after {step} labels failed, keeping θ: {e}"),
            }
            if refit.is_some() && self.cov.is_some() {
                self.cov = Some(Arc::new(PoolCovariance::new(&self.features, &self.theta)?));
            }
        }
        self.extend_order()?;
        Ok(StepUpdate { step, refit })
    }

    /// Keeps enough unobserved MI-LK picks to cover the remaining budget when
    /// off-order labels have been accepted.
    fn extend_order(&mut self) -> Result<(), SelectError> {
        let Some(cov) = &self.fixed_cov else {
            return Ok(());
        };
        let remaining = self.budget().saturating_sub(self.observed.len());
        let available = self.order.iter().filter(|p| !self.mask[p.index]).count();
        if available >= remaining {
            return Ok(());
        }
        let want = (self.order.len() + remaining - available).min(self.pool_size());
        let sel = &self.config.selector;
        self.order = select_mi_lk(cov, want, sel.epsilon, sel.d)?;
        Ok(())
    }

    fn model(&self) -> Result<GpModel, SelectError> {
        let x_a = self.features.select(&self.observed);
        Ok(GpModel::fit(&x_a, &self.labels, &self.theta)?)
    }

    /// Posterior over the whole pool under the current θ.
    pub fn predictions(&self) -> Result<Vec<PoolPrediction>, SelectError> {
        let post = self.model()?.predict(&self.features)?;
        let mut out: Vec<PoolPrediction> = post
            .mean
            .iter()
            .zip(&post.variance)
            .map(|(&mean, &var)| PoolPrediction {
                mean,
                sd: var.sqrt(),
                observed: false,
            })
            .collect();
        for (&i, &y) in self.observed.iter().zip(&self.labels) {
            out[i] = PoolPrediction {
                mean: y,
                sd: 0.0,
                observed: true,
            };
        }
        Ok(out)
    }

    /// Transductive predicted means only.
    pub fn predicted_means(&self) -> Result<Vec<f64>, SelectError> {
        Ok(self.predictions()?.into_iter().map(|p| p.mean).collect())
    }

    /// Projects the state after labelling `index` with `label`, θ fixed.
    pub fn what_if(&self, index: usize, label: f64) -> Result<WhatIf, SelectError> {
        self.check_label(index, label)?;
        let current = self.predictions()?;
        let mut projected = self.clone();
        projected.push_label(index, label);
        projected.extend_order()?;
        let predictions = projected.predictions()?;
        let sd_reduction: Vec<f64> = current.iter().zip(&predictions).map(|(c, p)| c.sd - p.sd).collect();
        let mean_sd_reduction = sd_reduction.iter().sum::<f64>() / sd_reduction.len() as f64;
        Ok(WhatIf {
            index,
            label,
            recommendation: projected.recommendation()?,
            predictions,
            sd_reduction,
            mean_sd_reduction,
        })
    }
}

#[derive(Debug, Error)]
#[error("oracle could not label point {index}: {message}")]
pub struct OracleError {
    pub index: usize,
    pub message: String,
}

/// Source of true labels for requested pool indices.
pub trait Oracle {
    fn label(&mut self, index: usize) -> Result<f64, OracleError>;
}

/// Reveals labels from a fully labelled pool.
pub struct PoolOracle<'a> {
    labels: &'a [f64],
}

impl<'a> PoolOracle<'a> {
    pub fn new(labels: &'a [f64]) -> Self {
        Self { labels }
    }
}

impl Oracle for PoolOracle<'_> {
    fn label(&mut self, index: usize) -> Result<f64, OracleError> {
        self.labels.get(index).copied().ok_or_else(|| OracleError {
            index,
            message: format!("pool has only {} labels", self.labels.len()),
        })
    }
}

impl<F> Oracle for F
where
    F: FnMut(usize) -> Result<f64, OracleError>,
{
    fn label(&mut self, index: usize) -> Result<f64, OracleError> {
        self(index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopOptions {
    /// Record pool predictions every this many steps (and at the last step);
    /// 0 disables them.
    pub predict_every: usize,
    pub record_theta: bool,
}

impl Default for LoopOptions {
    fn default() -> Self {
        Self {
            predict_every: 1,
            record_theta: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Number of labels after this step.
    pub step: usize,
    pub index: usize,
    pub score: f64,
    pub label: f64,
    pub elapsed_secs: f64,
    pub cumulative_secs: f64,
    pub theta: Option<Hyperparameters>,
    pub nlml: Option<f64>,
    /// Transductive predicted means over the whole pool.
    pub predictions: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub strategy: Strategy,
    /// Time spent constructing the session (the MI-LK order lives here).
    pub setup_secs: f64,
    pub steps: Vec<StepRecord>,
    pub final_theta: Hyperparameters,
}

impl SelectionTrace {
    pub fn indices(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.index).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_secs(&self) -> f64 {
        self.steps.last().map_or(self.setup_secs, |s| s.cumulative_secs)
    }
}

#[derive(Debug, Error)]
#[error("active loop stopped after {} steps: {source}", trace.steps.len())]
pub struct LoopError {
    pub trace: Box<SelectionTrace>,
    #[source]
    pub source: SelectError,
}

/// Runs `budget` select/label/refit steps against `oracle`.
pub fn run_active_loop(
    features: Arc<FeatureMatrix>,
    oracle: &mut dyn Oracle,
    config: &SessionConfig,
    opts: &LoopOptions,
) -> Result<SelectionTrace, LoopError> {
    let start = Instant::now();
    let mut trace = SelectionTrace {
        strategy: config.selector.strategy,
        setup_secs: 0.0,
        steps: Vec::new(),
        final_theta: config.theta_init.clone(),
    };
    let mut session = match ActiveSession::new(features, config.clone()) {
        Ok(s) => s,
        Err(source) => {
            return Err(LoopError {
                trace: Box::new(trace),
                source,
            })
        }
    };
    trace.setup_secs = start.elapsed().as_secs_f64();
    let budget = config.selector.budget;

    let mut cumulative = trace.setup_secs;
    for step in 1..=budget {
        let t0 = Instant::now();
        let outcome = (|| -> Result<StepRecord, SelectError> {
            let pick = session.recommend()?.ok_or(SelectError::BudgetExhausted(budget))?;
            let label = oracle.label(pick.index)?;
            let update = session.observe(pick.index, label)?;
            let predict = opts.predict_every > 0 && (step % opts.predict_every == 0 || step == budget);
            let predictions = if predict {
                Some(session.predicted_means()?)
            } else {
                None
            };
            Ok(StepRecord {
                step,
                index: pick.index,
                score: pick.score,
                label,
                elapsed_secs: 0.0,
                cumulative_secs: 0.0,
                theta: opts.record_theta.then(|| session.theta().clone()),
                nlml: update.refit.map(|r| r.nlml),
                predictions,
            })
        })();
        match outcome {
            Ok(mut rec) => {
                let elapsed = t0.elapsed().as_secs_f64();
                cumulative += elapsed;
                rec.elapsed_secs = elapsed;
                rec.cumulative_secs = cumulative;
                trace.steps.push(rec);
            }
            Err(source) => {
                trace.final_theta = session.theta().clone();
                return Err(LoopError {
                    trace: Box::new(trace),
                    source,
                });
            }
        }
    }
    trace.final_theta = session.theta().clone();
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, seed: u64) -> (Arc<FeatureMatrix>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let y = rows.iter().map(|r| (r[0]).sin() + 0.3 * r[1]).collect();
        (Arc::new(FeatureMatrix::from_rows(&rows).unwrap()), y)
    }

    fn config(strategy: Strategy, budget: usize) -> SessionConfig {
        let mut c = SessionConfig::new(
            SelectorConfig::new(strategy, 0.01, 10, budget, 3),
            Hyperparameters::ones(2),
        );
        c.mle.max_iters = 20;
        c
    }

    #[test]
    fn zero_budget_gives_empty_trace() {
        let (x, y) = toy(10, 1);
        let trace = run_active_loop(x, &mut PoolOracle::new(&y), &config(Strategy::MiAlk, 0), &LoopOptions::default()).unwrap();
        assert!(trace.is_empty());
    }

    #[test]
    fn traces_are_deterministic_and_unique() {
        let (x, y) = toy(25, 2);
        for s in [Strategy::Random, Strategy::Alm, Strategy::Mi, Strategy::MiLk, Strategy::MiAlk] {
            let cfg = config(s, 8);
            let a = run_active_loop(x.clone(), &mut PoolOracle::new(&y), &cfg, &LoopOptions::default()).unwrap();
            let b = run_active_loop(x.clone(), &mut PoolOracle::new(&y), &cfg, &LoopOptions::default()).unwrap();
            let idx = a.indices();
            assert_eq!(idx, b.indices(), "{s}");
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 8, "{s}");
            assert!(a.steps.windows(2).all(|w| w[0].cumulative_secs <= w[1].cumulative_secs));
        }
    }

    #[test]
    fn oracle_failure_keeps_partial_trace() {
        let (x, y) = toy(12, 3);
        let mut calls = 0;
        let mut oracle = |i: usize| {
            calls += 1;
            if calls > 3 {
                Err(OracleError { index: i, message: "offline".into() })
            } else {
                Ok(y[i])
            }
        };
        let err = run_active_loop(x, &mut oracle, &config(Strategy::Alm, 6), &LoopOptions::default()).unwrap_err();
        assert_eq!(err.trace.steps.len(), 3);
        assert!(matches!(err.source, SelectError::Oracle(_)));
    }

    #[test]
    fn session_contract() {
        let (x, y) = toy(10, 4);
        let mut s = ActiveSession::new(x, config(Strategy::MiAlk, 3)).unwrap();
        let first = s.recommend().unwrap().unwrap();
        assert_eq!(s.recommend().unwrap().unwrap(), first);
        let fresh = s.predictions().unwrap();
        assert!(fresh.iter().all(|p| p.mean == 0.0 && !p.observed));

        let other = (first.index + 1) % 10;
        let wi = s.what_if(other, y[other]).unwrap();
        assert_eq!(wi.predictions[other].sd, 0.0);
        assert_eq!(s.predictions().unwrap(), fresh);
        assert_eq!(s.pending(), Some(first));

        s.observe(first.index, y[first.index]).unwrap();
        assert!(matches!(s.observe(first.index, 1.0), Err(SelectError::AlreadyObserved(_))));
        assert!(matches!(s.observe(other, f64::NAN), Err(SelectError::NonFiniteLabel { .. })));
        let p = s.predictions().unwrap();
        assert_eq!(p[first.index].sd, 0.0);
        assert_eq!(p[first.index].mean, y[first.index]);
        let next = s.recommend().unwrap().unwrap();
        assert!(!s.is_observed(next.index));
        s.observe(next.index, y[next.index]).unwrap();
        while !s.is_exhausted() {
            let p = s.recommend().unwrap().unwrap();
            s.observe(p.index, y[p.index]).unwrap();
        }
        assert_eq!(s.recommend().unwrap(), None);
        let free = (0..10).find(|i| !s.is_observed(*i)).unwrap();
        assert!(matches!(s.observe(free, 1.0), Err(SelectError::BudgetExhausted(3))));
    }

    #[test]
    fn milk_order_survives_overrides() {
        let (x, y) = toy(12, 5);
        let mut s = ActiveSession::new(x, config(Strategy::MiLk, 4)).unwrap();
        let order: Vec<usize> = s.precomputed_order().iter().map(|p| p.index).collect();
        let off: Vec<usize> = (0..12).filter(|i| !order.contains(i)).take(3).collect();
        for &i in &off {
            s.observe(i, y[i]).unwrap();
        }
        assert_eq!(s.recommend().unwrap().unwrap().index, order[0]);
    }
}
