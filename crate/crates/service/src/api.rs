//! HTTP routes and the in-memory campaign registry.
//!
//! Mutations of one campaign are serialized by its writer lock and run on
//! the blocking pool; reads are served from the last committed view and
//! never wait for a refit.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use alkgp::selectors::ActiveSession;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::Mutex;

use crate::campaign::{
    session_config, CampaignState, CampaignSummary, CreateCampaign, Engine, Event, PointPrediction, Recommendation,
    StepMetrics,
};
use crate::config::ServiceConfig;
use crate::error::ApiError;
use crate::store::{self, EventLog};

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// The committed state readers see.
#[derive(Debug)]
pub struct View {
    pub state: CampaignState,
    pub summary: CampaignSummary,
    pub predictions: Arc<Vec<PointPrediction>>,
    pub session: ActiveSession,
    pub point_ids: Arc<Vec<String>>,
}

impl View {
    fn of(engine: &Engine) -> Arc<Self> {
        Arc::new(Self {
            state: engine.state.clone(),
            summary: engine.summary(),
            predictions: Arc::clone(&engine.predictions),
            session: engine.session.clone(),
            point_ids: Arc::new(engine.pool.ids.clone()),
        })
    }
}

struct Writer {
    engine: Engine,
    log: EventLog,
    /// Wall time of each accepted label's processing; not part of the state.
    step_secs: Vec<f64>,
}

pub struct Campaign {
    writer: Arc<Mutex<Writer>>,
    view: RwLock<Arc<View>>,
    step_secs: RwLock<Arc<Vec<f64>>>,
}

impl Campaign {
    pub fn view(&self) -> Arc<View> {
        Arc::clone(&self.view.read().expect("view lock"))
    }

    fn publish(&self, w: &Writer) {
        *self.view.write().expect("view lock") = View::of(&w.engine);
        *self.step_secs.write().expect("timing lock") = Arc::new(w.step_secs.clone());
    }
}

pub struct AppState {
    pub config: ServiceConfig,
    campaigns: RwLock<HashMap<String, Arc<Campaign>>>,
}

impl AppState {
    /// Opens the data directory and replays every stored campaign.
    pub fn open(config: ServiceConfig) -> anyhow::Result<Arc<Self>> {
        let root = store::campaigns_dir(&config.data_dir);
        std::fs::create_dir_all(&root)?;
        let mut campaigns = HashMap::new();
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(&root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(store::EVENTS_FILE).exists())
            .collect();
        dirs.sort();
        for dir in dirs {
            match load_campaign(&dir) {
                Ok((id, c)) => {
                    campaigns.insert(id, Arc::new(c));
                }
                Err(e) => log::error!("skipping {}: {e}", dir.display()),
            }
        }
        log::info!("loaded {} campaigns from {}", campaigns.len(), root.display());
        Ok(Arc::new(Self {
            config,
            campaigns: RwLock::new(campaigns),
        }))
    }

    pub fn campaign(&self, id: &str) -> Result<Arc<Campaign>, ApiError> {
        self.campaigns
            .read()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    fn campaign_dir(&self, id: &str) -> PathBuf {
        store::campaigns_dir(&self.config.data_dir).join(id)
    }
}

fn load_campaign(dir: &Path) -> Result<(String, Campaign), ApiError> {
    let engine = store::replay_dir(dir)?;
    let bytes = store::snapshot_bytes(&engine.state);
    if store::read_snapshot(dir).as_deref() != Some(bytes.as_slice()) {
        log::warn!("{}: snapshot out of date, rewriting from the event log", dir.display());
        store::write_snapshot(dir, &engine.state)?;
    }
    let id = engine.state.id.clone();
    let w = Writer {
        log: EventLog::open(dir)?,
        engine,
        step_secs: Vec::new(),
    };
    let c = Campaign {
        view: RwLock::new(View::of(&w.engine)),
        step_secs: RwLock::new(Arc::new(Vec::new())),
        writer: Arc::new(Mutex::new(w)),
    };
    Ok((id, c))
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn body<T: serde::de::DeserializeOwned>(payload: Result<Json<Value>, JsonRejection>) -> Result<T, ApiError> {
    let Json(v) = payload.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_json", e.body_text()))?;
    serde_json::from_value(v).map_err(|e| ApiError::invalid(e.to_string()))
}

/// Accepts a JSON number or a numeric string (so `"NaN"` reaches validation).
fn number(v: &Value, field: &str) -> Result<f64, ApiError> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| ApiError::invalid(format!("{field} is not representable"))),
        Value::String(s) => s
            .trim()
            .parse::<f64>()
            .map_err(|_| ApiError::invalid(format!("{field} must be a number, got {s:?}"))),
        other => Err(ApiError::invalid(format!("{field} must be a number, got {other}"))),
    }
}

fn point_id(v: &Value) -> Result<String, ApiError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(ApiError::invalid(format!("point_id must be a string or integer, got {other}"))),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/health", get(|| async { Json(serde_json::json!({ "status": "ok" })) }))
        .route("/campaigns", post(create).get(list))
        .route("/campaigns/{id}", get(summary).delete(close))
        .route("/campaigns/{id}/recommendation", get(recommendation))
        .route("/campaigns/{id}/labels", post(submit_label))
        .route("/campaigns/{id}/predictions", get(predictions))
        .route("/campaigns/{id}/metrics", get(metrics))
        .route("/campaigns/{id}/what-if", post(what_if));
    let api = match &state.config.ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") }),
    };
    api.with_state(state)
}

async fn create(
    State(app): State<Arc<AppState>>,
    payload: Result<Json<Value>, JsonRejection>,
) -> Result<(StatusCode, Json<CampaignSummary>), ApiError> {
    let req: CreateCampaign = body(payload)?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let dir = app.campaign_dir(&id);
    let (writer, id) = blocking(move || {
        let pool = req.load_pool()?;
        let theta = req.resolve_theta(pool.dim())?;
        let event = Event::Created {
            seq: 0,
            at_ms: now_ms(),
            id: id.clone(),
            name: req.name.clone(),
            standardize: req.standardize,
            session: session_config(req.selector.clone(), theta, req.mle.clone()),
            pool,
        };
        let engine = Engine::create(&event)?;
        let mut log = EventLog::create(&dir)?;
        let written = log.append(&event).and_then(|_| store::write_snapshot(&dir, &engine.state));
        if let Err(e) = written {
            let _ = std::fs::remove_dir_all(&dir);
            return Err(e);
        }
        Ok((
            Writer {
                engine,
                log,
                step_secs: Vec::new(),
            },
            id,
        ))
    })
    .await?;
    let summary = writer.engine.summary();
    let campaign = Arc::new(Campaign {
        view: RwLock::new(View::of(&writer.engine)),
        step_secs: RwLock::new(Arc::new(Vec::new())),
        writer: Arc::new(Mutex::new(writer)),
    });
    app.campaigns.write().expect("registry lock").insert(id, campaign);
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn list(State(app): State<Arc<AppState>>) -> Json<Vec<CampaignSummary>> {
    let all: BTreeMap<String, Arc<Campaign>> = app
        .campaigns
        .read()
        .expect("registry lock")
        .iter()
        .map(|(k, v)| (k.clone(), Arc::clone(v)))
        .collect();
    Json(all.values().map(|c| c.view().summary.clone()).collect())
}

async fn summary(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<CampaignSummary>, ApiError> {
    Ok(Json(app.campaign(&id)?.view().summary.clone()))
}

async fn recommendation(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Recommendation>, ApiError> {
    Ok(Json(app.campaign(&id)?.view().state.recommendation()?))
}

#[derive(Debug, Deserialize)]
struct LabelRequest {
    point_id: Value,
    value: Value,
    #[serde(default, rename = "override")]
    override_recommendation: bool,
}

#[derive(Debug, Serialize)]
pub struct LabelResponse {
    pub summary: CampaignSummary,
    pub step: Option<StepMetrics>,
    pub recommendation: Option<Recommendation>,
    pub elapsed_secs: f64,
}

async fn submit_label(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    payload: Result<Json<Value>, JsonRejection>,
) -> Result<Json<LabelResponse>, ApiError> {
    let req: LabelRequest = body(payload)?;
    let pid = point_id(&req.point_id)?;
    let value = number(&req.value, "value")?;
    let campaign = app.campaign(&id)?;
    let guard = Arc::clone(&campaign.writer).lock_owned().await;
    let (guard, elapsed) = blocking(move || {
        let mut guard = guard;
        let start = Instant::now();
        let w = &mut *guard;
        let index = w.engine.check_label(&pid, value, req.override_recommendation)?;
        let event = Event::Label {
            seq: w.engine.state.seq + 1,
            at_ms: now_ms(),
            index,
            point_id: pid,
            value,
            override_recommendation: req.override_recommendation,
        };
        let mut next = w.engine.clone();
        next.apply(&event)?;
        w.log.append(&event)?;
        w.engine = next;
        store::write_snapshot(w.log.dir(), &w.engine.state)?;
        let elapsed = start.elapsed().as_secs_f64();
        w.step_secs.push(elapsed);
        Ok((guard, elapsed))
    })
    .await?;
    campaign.publish(&guard);
    let e = &guard.engine;
    Ok(Json(LabelResponse {
        summary: e.summary(),
        step: e.state.history.last().cloned(),
        recommendation: e.state.pending.clone(),
        elapsed_secs: elapsed,
    }))
}

#[derive(Debug, Serialize)]
pub struct PointPayload {
    pub point_id: String,
    pub index: usize,
    pub mean: f64,
    pub sd: f64,
    pub observed: bool,
}

#[derive(Debug, Serialize)]
pub struct PredictionsResponse {
    pub step: usize,
    pub points: Vec<PointPayload>,
}

fn points(ids: &[String], preds: &[PointPrediction]) -> Vec<PointPayload> {
    ids.iter()
        .zip(preds)
        .enumerate()
        .map(|(index, (id, p))| PointPayload {
            point_id: id.clone(),
            index,
            mean: p.mean,
            sd: p.sd,
            observed: p.observed,
        })
        .collect()
}

async fn predictions(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<PredictionsResponse>, ApiError> {
    let view = app.campaign(&id)?.view();
    Ok(Json(PredictionsResponse {
        step: view.state.observed.len(),
        points: points(&view.point_ids, &view.predictions),
    }))
}

#[derive(Debug, Serialize)]
pub struct MetricsResponse {
    pub step: usize,
    pub budget: usize,
    pub history: Vec<StepMetrics>,
    /// Processing time of each label accepted since the server started.
    pub step_secs: Vec<f64>,
}

async fn metrics(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<MetricsResponse>, ApiError> {
    let campaign = app.campaign(&id)?;
    let view = campaign.view();
    let step_secs = campaign.step_secs.read().expect("timing lock").as_ref().clone();
    Ok(Json(MetricsResponse {
        step: view.state.observed.len(),
        budget: view.state.budget(),
        history: view.state.history.clone(),
        step_secs,
    }))
}

#[derive(Debug, Deserialize)]
struct WhatIfRequest {
    point_id: Value,
    value: Value,
}

#[derive(Debug, Serialize)]
pub struct WhatIfResponse {
    pub point_id: String,
    pub value: f64,
    /// Next recommendation if the label were accepted, with θ held fixed.
    pub recommendation: Option<ProjectedPick>,
    pub points: Vec<PointPayload>,
    pub sd_reduction: Vec<f64>,
    pub mean_sd_reduction: f64,
}

#[derive(Debug, Serialize)]
pub struct ProjectedPick {
    pub point_id: String,
    pub index: usize,
    pub score: f64,
}

async fn what_if(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    payload: Result<Json<Value>, JsonRejection>,
) -> Result<Json<WhatIfResponse>, ApiError> {
    let req: WhatIfRequest = body(payload)?;
    let pid = point_id(&req.point_id)?;
    let value = number(&req.value, "value")?;
    let view = app.campaign(&id)?.view();
    let out = blocking(move || {
        view.state.ensure_open()?;
        let index = view
            .point_ids
            .iter()
            .position(|p| *p == pid)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_point", format!("no point with id {pid:?}")))?;
        let w = view.session.what_if(index, value)?;
        let preds: Vec<PointPrediction> = w
            .predictions
            .iter()
            .map(|p| PointPrediction {
                mean: p.mean,
                sd: p.sd,
                observed: p.observed,
            })
            .collect();
        Ok(WhatIfResponse {
            point_id: pid,
            value,
            recommendation: w.recommendation.map(|p| ProjectedPick {
                point_id: view.point_ids[p.index].clone(),
                index: p.index,
                score: p.score,
            }),
            points: points(&view.point_ids, &preds),
            sd_reduction: w.sd_reduction,
            mean_sd_reduction: w.mean_sd_reduction,
        })
    })
    .await?;
    Ok(Json(out))
}

async fn close(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<CampaignSummary>, ApiError> {
    let campaign = app.campaign(&id)?;
    let guard = Arc::clone(&campaign.writer).lock_owned().await;
    let guard = blocking(move || {
        let mut guard = guard;
        let w = &mut *guard;
        if w.engine.state.status == crate::campaign::Status::Closed {
            return Err(ApiError::new(StatusCode::CONFLICT, "campaign_closed", "campaign is already closed"));
        }
        let event = Event::Closed {
            seq: w.engine.state.seq + 1,
            at_ms: now_ms(),
        };
        let mut next = w.engine.clone();
        next.apply(&event)?;
        w.log.append(&event)?;
        w.engine = next;
        store::write_snapshot(w.log.dir(), &w.engine.state)?;
        Ok(guard)
    })
    .await?;
    campaign.publish(&guard);
    Ok(Json(guard.engine.summary()))
}
