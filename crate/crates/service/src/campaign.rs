//! Campaign state machine, independent of HTTP and storage.
//!
//! Every transition is a pure function of the previous state and an
//! [`Event`], so replaying a campaign's event log reproduces its state
//! exactly.

use std::path::PathBuf;
use std::sync::Arc;

use alkgp::dataset::{self, Pool, Schema, Standardizer};
use alkgp::gp::{FeatureMatrix, Hyperparameters};
use alkgp::metrics;
use alkgp::mle::{MleOptions, MleResult};
use alkgp::rng;
use alkgp::selectors::{ActiveSession, Pick, SelectorConfig, SessionConfig, Strategy};
use axum::http::StatusCode;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    /// CSV text in the request body.
    Csv { text: String },
    /// CSV file readable by the server.
    Path { path: PathBuf },
    /// Generated Bouc-Wen SDOF table.
    Sdof {
        #[serde(default = "default_sdof_n")]
        n: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_sdof_n() -> usize {
    400
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThetaKind {
    /// Drawn from the selector seed.
    Random,
    /// All hyperparameters equal to 1.
    Ones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaSpec {
    Named(ThetaKind),
    Explicit(Hyperparameters),
}

impl Default for ThetaSpec {
    fn default() -> Self {
        ThetaSpec::Named(ThetaKind::Random)
    }
}

/// Body of `POST /campaigns`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateCampaign {
    #[serde(default)]
    pub name: Option<String>,
    pub dataset: DatasetSource,
    /// Column roles; defaults to the SDOF layout.
    #[serde(default)]
    pub schema: Option<Schema>,
    /// Known ground-truth column, used only to report SMSE and CC.
    #[serde(default)]
    pub reference_label: Option<String>,
    pub selector: SelectorConfig,
    #[serde(default)]
    pub theta_init: ThetaSpec,
    /// Refit options; each refit starts from the previous θ plus these restarts.
    #[serde(default = "default_mle")]
    pub mle: MleOptions,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

pub fn default_mle() -> MleOptions {
    MleOptions {
        restarts: 1,
        ..MleOptions::default()
    }
}

fn default_true() -> bool {
    true
}

/// θ drawn for `ThetaKind::Random`.
pub fn random_theta(dim: usize, selector_seed: u64) -> Hyperparameters {
    Hyperparameters::random(dim, &mut rng::stream(rng::derive_named(selector_seed, "theta_init")))
}

/// Session configuration used by a campaign; the library loop given the same
/// value and features makes the same picks.
pub fn session_config(selector: SelectorConfig, theta_init: Hyperparameters, mle: MleOptions) -> SessionConfig {
    SessionConfig {
        selector,
        theta_init,
        mle,
        refit: true,
        refit_every: 1,
        restart_every: 1,
    }
}

/// Features seen by the selector: standardized per column when requested.
pub fn model_features(pool: &Pool, standardize: bool) -> FeatureMatrix {
    if standardize {
        Standardizer::fit(&pool.features).transform(&pool.features)
    } else {
        pool.features.clone()
    }
}

impl CreateCampaign {
    pub fn load_pool(&self) -> Result<Pool, ApiError> {
        let label = self.reference_label.as_deref();
        match &self.dataset {
            DatasetSource::Sdof { n, seed } => {
                let ds = alkgp::boucwen::build_dataset(*n, *seed)
                    .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_dataset", e.to_string()))?;
                let mut pool = ds.to_pool();
                if label.is_none() {
                    pool.labels = None;
                }
                Ok(pool)
            }
            DatasetSource::Csv { text } => {
                let schema = self.schema.clone().unwrap_or_else(Schema::sdof);
                Ok(dataset::read_pool_csv(text.as_bytes(), &schema, label)?)
            }
            DatasetSource::Path { path } => {
                let schema = self.schema.clone().unwrap_or_else(Schema::sdof);
                let file = std::fs::File::open(path).map_err(|e| {
                    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_dataset", format!("{}: {e}", path.display()))
                })?;
                Ok(dataset::read_pool_csv(file, &schema, label)?)
            }
        }
    }

    pub fn resolve_theta(&self, dim: usize) -> Result<Hyperparameters, ApiError> {
        Ok(match &self.theta_init {
            ThetaSpec::Named(ThetaKind::Random) => random_theta(dim, self.selector.seed),
            ThetaSpec::Named(ThetaKind::Ones) => Hyperparameters::ones(dim),
            ThetaSpec::Explicit(t) => {
                if t.dim() != dim {
                    return Err(ApiError::invalid(format!(
                        "theta_init has {} lengthscales but the pool has {dim} features",
                        t.dim()
                    )));
                }
                t.clone()
            }
        })
    }
}

/// One line of a campaign's event log.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Created {
        seq: u64,
        at_ms: u64,
        id: String,
        name: Option<String>,
        pool: Pool,
        standardize: bool,
        session: SessionConfig,
    },
    Label {
        seq: u64,
        at_ms: u64,
        index: usize,
        point_id: String,
        value: f64,
        #[serde(rename = "override")]
        override_recommendation: bool,
    },
    Closed {
        seq: u64,
        at_ms: u64,
    },
}

impl Event {
    pub fn seq(&self) -> u64 {
        match self {
            Event::Created { seq, .. } | Event::Label { seq, .. } | Event::Closed { seq, .. } => *seq,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    BudgetExhausted,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub step: usize,
    pub index: usize,
    pub point_id: String,
    pub value: f64,
    #[serde(rename = "override")]
    pub override_recommendation: bool,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub point_id: String,
    pub index: usize,
    pub score: f64,
    /// Raw (unstandardized) feature values, keyed by `feature_names` order.
    pub features: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    /// Timestamp of the event that produced this recommendation.
    pub issued_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub point_id: String,
    pub value: f64,
    pub theta: Hyperparameters,
    pub nlml: Option<f64>,
    /// Mean predictive sd over unobserved points.
    pub mean_sd: f64,
    pub smse: Option<f64>,
    pub cc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPrediction {
    pub mean: f64,
    pub sd: f64,
    pub observed: bool,
}

/// Everything a campaign's behaviour depends on. Replaying the event log
/// rebuilds this value exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub id: String,
    pub name: Option<String>,
    pub created_at_ms: u64,
    pub status: Status,
    pub seq: u64,
    pub standardize: bool,
    pub session: SessionConfig,
    pub feature_names: Vec<String>,
    pub point_ids: Vec<String>,
    pub observed: Vec<Observation>,
    pub theta: Hyperparameters,
    pub last_fit: Option<MleResult>,
    pub pending: Option<Recommendation>,
    pub history: Vec<StepMetrics>,
}

impl CampaignState {
    pub fn budget(&self) -> usize {
        self.session.selector.budget
    }

    pub fn strategy(&self) -> Strategy {
        self.session.selector.strategy
    }

    pub fn ensure_open(&self) -> Result<(), ApiError> {
        match self.status {
            Status::Closed => Err(ApiError::new(StatusCode::CONFLICT, "campaign_closed", "campaign is closed")),
            Status::BudgetExhausted => Err(ApiError::new(
                StatusCode::CONFLICT,
                "budget_exhausted",
                format!("all {} labels of the budget have been used", self.budget()),
            )),
            Status::Active => Ok(()),
        }
    }

    pub fn recommendation(&self) -> Result<Recommendation, ApiError> {
        self.ensure_open()?;
        self.pending
            .clone()
            .ok_or_else(|| ApiError::internal("active campaign without a recommendation"))
    }
}

/// Compact view returned by `GET /campaigns/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub id: String,
    pub name: Option<String>,
    pub status: Status,
    pub strategy: Strategy,
    pub step: usize,
    pub budget: usize,
    pub pool_size: usize,
    pub feature_names: Vec<String>,
    pub theta: Hyperparameters,
    pub nlml: Option<f64>,
    pub recommendation: Option<Recommendation>,
    pub session: SessionConfig,
}

/// A campaign's live objects: the selection session plus derived payloads.
#[derive(Debug, Clone)]
pub struct Engine {
    pub state: CampaignState,
    pub session: ActiveSession,
    pub pool: Arc<Pool>,
    pub predictions: Arc<Vec<PointPrediction>>,
}

fn to_points(preds: Vec<alkgp::selectors::PoolPrediction>) -> Vec<PointPrediction> {
    preds
        .into_iter()
        .map(|p| PointPrediction {
            mean: p.mean,
            sd: p.sd,
            observed: p.observed,
        })
        .collect()
}

impl Engine {
    /// Applies a `Created` event.
    pub fn create(event: &Event) -> Result<Self, ApiError> {
        let Event::Created {
            seq,
            at_ms,
            id,
            name,
            pool,
            standardize,
            session,
        } = event
        else {
            return Err(ApiError::internal("event log does not start with a creation event"));
        };
        let features = Arc::new(model_features(pool, *standardize));
        let mut active = ActiveSession::new(features, session.clone())?;
        active.recommend()?;
        let pool = Arc::new(pool.clone());
        let mut engine = Self {
            state: CampaignState {
                id: id.clone(),
                name: name.clone(),
                created_at_ms: *at_ms,
                status: Status::Active,
                seq: *seq,
                standardize: *standardize,
                session: session.clone(),
                feature_names: pool.feature_names.clone(),
                point_ids: pool.ids.clone(),
                observed: Vec::new(),
                theta: active.theta().clone(),
                last_fit: None,
                pending: None,
                history: Vec::new(),
            },
            session: active,
            pool,
            predictions: Arc::new(Vec::new()),
        };
        engine.refresh(*at_ms)?;
        Ok(engine)
    }

    fn refresh(&mut self, at_ms: u64) -> Result<(), ApiError> {
        self.predictions = Arc::new(to_points(self.session.predictions()?));
        self.state.theta = self.session.theta().clone();
        self.state.last_fit = self.session.last_fit().cloned();
        self.state.pending = self.session.pending().map(|p| self.recommendation_payload(p, at_ms));
        if self.state.status != Status::Closed && self.session.is_exhausted() {
            self.state.status = Status::BudgetExhausted;
        }
        Ok(())
    }

    fn recommendation_payload(&self, pick: Pick, issued_at_ms: u64) -> Recommendation {
        let p = self.predictions[pick.index];
        Recommendation {
            point_id: self.pool.ids[pick.index].clone(),
            index: pick.index,
            score: pick.score,
            features: self.pool.features.row(pick.index).to_vec(),
            mean: p.mean,
            sd: p.sd,
            issued_at_ms,
        }
    }

    pub fn index_of(&self, point_id: &str) -> Result<usize, ApiError> {
        self.pool.index_of(point_id).ok_or_else(|| {
            ApiError::new(StatusCode::NOT_FOUND, "unknown_point", format!("no point with id {point_id:?}"))
        })
    }

    pub fn recommendation(&self) -> Result<Recommendation, ApiError> {
        self.state.recommendation()
    }

    /// Validates a label submission and returns the point index.
    pub fn check_label(&self, point_id: &str, value: f64, override_recommendation: bool) -> Result<usize, ApiError> {
        self.state.ensure_open()?;
        let index = self.index_of(point_id)?;
        if self.session.is_observed(index) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "already_observed",
                format!("point {point_id:?} already has a label"),
            ));
        }
        if !value.is_finite() {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_label",
                format!("label must be a finite number, got {value}"),
            ));
        }
        let pending = self.state.pending.as_ref().map(|p| p.index);
        if pending != Some(index) && !override_recommendation {
            let rec = self.state.pending.as_ref().map(|p| p.point_id.clone());
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "not_recommended",
                format!("point {point_id:?} is not the pending recommendation; set override to label it anyway"),
            )
            .with_details(serde_json::json!({ "recommended": rec })));
        }
        Ok(index)
    }

    /// Applies any event after creation.
    pub fn apply(&mut self, event: &Event) -> Result<(), ApiError> {
        match event {
            Event::Created { .. } => return Err(ApiError::internal("duplicate creation event")),
            Event::Label {
                at_ms,
                index,
                point_id,
                value,
                override_recommendation,
                ..
            } => {
                self.session.observe(*index, *value)?;
                self.session.recommend()?;
                self.refresh(*at_ms)?;
                let step = self.session.observed().len();
                self.state.observed.push(Observation {
                    step,
                    index: *index,
                    point_id: point_id.clone(),
                    value: *value,
                    override_recommendation: *override_recommendation,
                    at_ms: *at_ms,
                });
                let metrics = self.step_metrics(step, point_id, *value);
                self.state.history.push(metrics);
            }
            Event::Closed { .. } => {
                self.state.status = Status::Closed;
            }
        }
        self.state.seq = event.seq();
        Ok(())
    }

    fn step_metrics(&self, step: usize, point_id: &str, value: f64) -> StepMetrics {
        let unobserved: Vec<f64> = self.predictions.iter().filter(|p| !p.observed).map(|p| p.sd).collect();
        let mean_sd = if unobserved.is_empty() {
            0.0
        } else {
            unobserved.iter().sum::<f64>() / unobserved.len() as f64
        };
        let means: Vec<f64> = self.predictions.iter().map(|p| p.mean).collect();
        let (smse, cc) = match &self.pool.labels {
            Some(truth) => (metrics::smse(&means, truth).ok(), metrics::cc(&means, truth).ok()),
            None => (None, None),
        };
        StepMetrics {
            step,
            point_id: point_id.to_string(),
            value,
            theta: self.state.theta.clone(),
            nlml: self.state.last_fit.as_ref().map(|f| f.nlml),
            mean_sd,
            smse,
            cc,
        }
    }

    pub fn summary(&self) -> CampaignSummary {
        let s = &self.state;
        CampaignSummary {
            id: s.id.clone(),
            name: s.name.clone(),
            status: s.status,
            strategy: s.strategy(),
            step: s.observed.len(),
            budget: s.budget(),
            pool_size: s.point_ids.len(),
            feature_names: s.feature_names.clone(),
            theta: s.theta.clone(),
            nlml: s.last_fit.as_ref().map(|f| f.nlml),
            recommendation: s.pending.clone(),
            session: s.session.clone(),
        }
    }
}
