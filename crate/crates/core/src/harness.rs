//! Seeded multi-realization experiment runner.
//!
//! A plan lists learning configurations and how many realizations to run.
//! Realization `k` draws its working pool and initial hyperparameters from
//! `(base_seed, k)` alone, so every configuration sees the same pools and
//! starting points; per-configuration randomness (random orders, refit
//! restarts) additionally mixes in the configuration id.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boucwen;
use crate::dataset::{self, DatasetError, Schema, Standardizer};
use crate::gp::{FeatureMatrix, Hyperparameters};
use crate::metrics::{self, MetricError, SimilarityPdf};
use crate::mle::{self, MleError, MleOptions, MleResult};
use crate::rng;
use crate::selectors::{run_active_loop, LoopOptions, PoolOracle, SelectionTrace, SelectorConfig, SessionConfig, Strategy};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid plan: {0}")]
    Plan(String),

    #[error(transparent)]
    Dataset(#[from] DatasetError),

    #[error(transparent)]
    BoucWen(#[from] boucwen::BoucWenError),

    #[error(transparent)]
    Mle(#[from] MleError),

    #[error(transparent)]
    Metric(#[from] MetricError),

    #[error("every realization of config {0:?} failed")]
    ConfigFailed(String),

    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    /// Generated Bouc-Wen SDOF table.
    Sdof {
        #[serde(default = "default_sdof_n")]
        n: usize,
        #[serde(default)]
        seed: u64,
    },
    /// External CSV with a TOML schema; relative paths resolve against the plan file.
    Csv {
        path: PathBuf,
        schema: PathBuf,
        #[serde(default)]
        label: Option<String>,
    },
}

fn default_sdof_n() -> usize {
    400
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThetaInit {
    /// All hyperparameters equal to 1.
    Arbitrary,
    /// Maximum likelihood on the full labelled dataset.
    Mle,
    /// Drawn per realization.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSpec {
    pub id: String,
    pub strategy: Strategy,
    /// For MI-LK a multiple of the initial autocovariance; for MI-ALK the
    /// fraction of the current autocovariance.
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_theta_init")]
    pub theta_init: ThetaInit,
    /// Steps at which predictions are scored; defaults to every step, or
    /// every 10 for RND.
    #[serde(default)]
    pub score_every: Option<usize>,
}

fn default_d() -> usize {
    50
}

fn default_theta_init() -> ThetaInit {
    ThetaInit::Random
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMle {
    #[serde(default = "default_reference_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

fn default_reference_restarts() -> usize {
    100
}

fn default_max_iters() -> usize {
    100
}

impl Default for ReferenceMle {
    fn default() -> Self {
        Self {
            restarts: default_reference_restarts(),
            seed: 0,
            max_iters: default_max_iters(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub name: String,
    pub dataset: DatasetSpec,
    pub configs: Vec<ConfigSpec>,
    pub budget: usize,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default = "default_paper_realizations")]
    pub paper_realizations: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_auc_start")]
    pub auc_start: usize,
    #[serde(default = "default_fraction")]
    pub split_fraction: f64,
    #[serde(default = "default_true")]
    pub standardize: bool,
    /// Refit options used inside the active loop.
    #[serde(default)]
    pub mle: MleOptions,
    /// Loop refits add `mle.restarts` random starts only every this many labels.
    #[serde(default = "default_restart_every")]
    pub restart_every: usize,
    #[serde(default)]
    pub reference_mle: ReferenceMle,
    /// Steps at which representativeness distributions are computed.
    #[serde(default)]
    pub similarity_steps: Vec<usize>,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_restart_every() -> usize {
    1
}

fn default_realizations() -> usize {
    16
}

fn default_paper_realizations() -> usize {
    100
}

fn default_auc_start() -> usize {
    metrics::AUC_START
}

fn default_fraction() -> f64 {
    0.8
}

fn default_true() -> bool {
    true
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Plan(e.to_string()))
    }

    /// Parses a plan file, resolving dataset paths against its directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut plan = Self::from_toml(&text)?;
        if let DatasetSpec::Csv { path: p, schema, .. } = &mut plan.dataset {
            let base = path.parent().unwrap_or(Path::new("."));
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if schema.is_relative() {
                *schema = base.join(&*schema);
            }
        }
        Ok(plan)
    }

    pub fn validate(&self, dataset_rows: usize) -> Result<(), HarnessError> {
        if self.configs.is_empty() {
            return Err(HarnessError::Plan("no configs".into()));
        }
        let pool = (self.split_fraction * dataset_rows as f64).round() as usize;
        if self.budget >= pool {
            return Err(HarnessError::Plan(format!(
                "budget {} must be smaller than the working pool of {pool}",
                self.budget
            )));
        }
        let mut ids = std::collections::HashSet::new();
        for c in &self.configs {
            if !ids.insert(c.id.as_str()) {
                return Err(HarnessError::Plan(format!("duplicate config id {:?}", c.id)));
            }
            if c.score_every == Some(0) {
                return Err(HarnessError::Plan(format!("config {:?}: score_every must be ≥ 1", c.id)));
            }
        }
        Ok(())
    }
}

/// Features (standardized when requested) and one label column.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub features: FeatureMatrix,
    pub labels: Vec<f64>,
    pub feature_names: Vec<String>,
}

pub fn load_data(spec: &DatasetSpec, standardize: bool) -> Result<LoadedData, HarnessError> {
    let (features, labels, feature_names) = match spec {
        DatasetSpec::Sdof { n, seed } => {
            let ds = boucwen::build_dataset(*n, *seed)?;
            let names = boucwen::FEATURE_COLUMNS.iter().map(|s| s.to_string()).collect();
            (ds.features, ds.labels, names)
        }
        DatasetSpec::Csv { path, schema, label } => {
            let schema = Schema::load(schema)?;
            let ds = dataset::load_csv(path, &schema)?;
            let li = match label {
                Some(name) => ds
                    .label_names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| HarnessError::Plan(format!("no label column {name:?}")))?,
                None => 0,
            };
            (ds.features, ds.labels[li].clone(), ds.feature_names)
        }
    };
    let features = if standardize {
        Standardizer::fit(&features).transform(&features)
    } else {
        features
    };
    Ok(LoadedData {
        features,
        labels,
        feature_names,
    })
}

/// Multi-start maximum likelihood on a full dataset, starting from all ones.
pub fn reference_theta(data: &LoadedData, opts: &ReferenceMle) -> Result<MleResult, HarnessError> {
    let mle_opts = MleOptions {
        max_iters: opts.max_iters,
        restarts: opts.restarts,
        seed: opts.seed,
        ..MleOptions::default()
    };
    Ok(mle::fit(
        &data.features,
        &data.labels,
        &Hyperparameters::ones(data.features.cols()),
        &mle_opts,
    )?)
}

/// Randomness shared by every configuration in realization `k`.
fn realization_seed(base: u64, k: usize) -> u64 {
    rng::derive(base, k as u64)
}

fn config_seed(base: u64, config: &str, k: usize) -> u64 {
    rng::derive_named(realization_seed(base, k), config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationResult {
    pub config: String,
    pub realization: usize,
    /// Dataset rows forming the working pool.
    pub pool_indices: Vec<usize>,
    pub theta_init: Hyperparameters,
    pub trace: Option<SelectionTrace>,
    pub smse: Option<metrics::LearningCurve>,
    pub cc: Option<metrics::LearningCurve>,
    pub auc_smse: Option<f64>,
    /// Cov_max of the unobserved pool points at each similarity step.
    pub cov_max: BTreeMap<usize, Vec<f64>>,
    pub error: Option<String>,
}

impl RealizationResult {
    pub fn total_secs(&self) -> Option<f64> {
        self.trace.as_ref().map(SelectionTrace::total_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub plan: ExperimentPlan,
    pub reference: Option<MleResult>,
    pub realizations: Vec<RealizationResult>,
}

impl ExperimentResult {
    pub fn for_config<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a RealizationResult> + 'a {
        self.realizations.iter().filter(move |r| r.config == id)
    }
}

/// Shared inputs of a plan run.
struct Context<'a> {
    plan: &'a ExperimentPlan,
    data: &'a LoadedData,
    reference: Option<&'a Hyperparameters>,
}

fn theta_for(ctx: &Context, init: ThetaInit, k: usize) -> Hyperparameters {
    let dim = ctx.data.features.cols();
    match init {
        ThetaInit::Arbitrary => Hyperparameters::ones(dim),
        ThetaInit::Mle => ctx.reference.cloned().unwrap_or_else(|| Hyperparameters::ones(dim)),
        ThetaInit::Random => {
            let mut r = rng::stream(rng::derive_named(realization_seed(ctx.plan.base_seed, k), "theta_init"));
            Hyperparameters::random(dim, &mut r)
        }
    }
}

fn run_one(ctx: &Context, cfg: &ConfigSpec, k: usize) -> RealizationResult {
    let plan = ctx.plan;
    let n = ctx.data.features.rows();
    let split_seed = rng::derive_named(realization_seed(plan.base_seed, k), "split");
    let mut result = RealizationResult {
        config: cfg.id.clone(),
        realization: k,
        pool_indices: Vec::new(),
        theta_init: theta_for(ctx, cfg.theta_init, k),
        trace: None,
        smse: None,
        cc: None,
        auc_smse: None,
        cov_max: BTreeMap::new(),
        error: None,
    };
    let split = match dataset::make_split(n, plan.split_fraction, split_seed) {
        Ok(s) => s,
        Err(e) => {
            result.error = Some(e.to_string());
            return result;
        }
    };
    result.pool_indices = split.pool_indices.clone();
    let features = Arc::new(ctx.data.features.select(&split.pool_indices));
    let truths: Vec<f64> = split.pool_indices.iter().map(|&i| ctx.data.labels[i]).collect();

    let seed = config_seed(plan.base_seed, &cfg.id, k);
    let score_every = cfg
        .score_every
        .unwrap_or(if cfg.strategy == Strategy::Random { 10 } else { 1 });
    let epsilon = match cfg.strategy {
        Strategy::MiLk => cfg.epsilon * result.theta_init.signal_variance(),
        _ => cfg.epsilon,
    };
    let session = SessionConfig {
        selector: SelectorConfig::new(cfg.strategy, epsilon, cfg.d, plan.budget, seed),
        theta_init: result.theta_init.clone(),
        mle: MleOptions {
            seed: rng::derive_named(seed, "refit"),
            ..plan.mle.clone()
        },
        refit: true,
        refit_every: if cfg.strategy.uses_current_theta() { 1 } else { score_every },
        restart_every: plan.restart_every,
    };
    let opts = LoopOptions {
        predict_every: score_every,
        record_theta: true,
    };
    let trace = match run_active_loop(features.clone(), &mut PoolOracle::new(&truths), &session, &opts) {
        Ok(t) => t,
        Err(e) => {
            result.error = Some(e.to_string());
            result.trace = Some(*e.trace);
            return result;
        }
    };

    let (mut steps, mut s_vals, mut c_vals) = (Vec::new(), Vec::new(), Vec::new());
    for rec in &trace.steps {
        if let Some(pred) = &rec.predictions {
            steps.push(rec.step);
            s_vals.push(metrics::smse(pred, &truths).unwrap_or(f64::NAN));
            c_vals.push(metrics::cc(pred, &truths).unwrap_or(f64::NAN));
        }
    }
    let smse = metrics::LearningCurve::new(k, steps.clone(), s_vals).ok();
    result.cc = metrics::LearningCurve::new(k, steps, c_vals).ok();
    result.auc_smse = smse.as_ref().and_then(|c| match c.auc(plan.auc_start) {
        Ok(a) => Some(a),
        Err(e) => {
            log::warn!("{} realization {k}: AUC omitted: {e}", cfg.id);
            None
        }
    });
    result.smse = smse;

    let picks = trace.indices();
    for &h in plan.similarity_steps.iter().filter(|&&h| h >= 1 && h <= picks.len()) {
        let mut observed = vec![false; features.rows()];
        for &p in &picks[..h] {
            observed[p] = true;
        }
        let targets: Vec<usize> = (0..features.rows()).filter(|&i| !observed[i]).collect();
        match metrics::cov_max_trajectory(&features, &picks, &targets, &[h], &trace.final_theta) {
            Ok(mut v) => {
                result.cov_max.insert(h, v.pop().unwrap_or_default());
            }
            Err(e) => log::warn!("{} realization {k}: similarity at {h} omitted: {e}", cfg.id),
        }
    }
    result.trace = Some(trace);
    result
}

/// Progress callback: (config id, realization, finished count, total).
pub type Progress<'a> = dyn Fn(&str, usize, usize, usize) + Sync + 'a;

/// Runs every (config, realization) pair on up to `workers` threads.
pub fn run_plan(plan: &ExperimentPlan, workers: usize, progress: Option<&Progress>) -> Result<ExperimentResult, HarnessError> {
    let data = load_data(&plan.dataset, plan.standardize)?;
    let needs_reference = plan.configs.iter().any(|c| c.theta_init == ThetaInit::Mle);
    let reference = if needs_reference {
        Some(reference_theta(&data, &plan.reference_mle)?)
    } else {
        None
    };
    run_plan_with(plan, &data, reference, workers, progress)
}

/// As [`run_plan`], with the data and reference fit supplied by the caller.
pub fn run_plan_with(
    plan: &ExperimentPlan,
    data: &LoadedData,
    reference: Option<MleResult>,
    workers: usize,
    progress: Option<&Progress>,
) -> Result<ExperimentResult, HarnessError> {
    plan.validate(data.features.rows())?;
    let ctx = Context {
        plan,
        data,
        reference: reference.as_ref().map(|r| &r.theta),
    };
    let jobs: Vec<(usize, usize)> = (0..plan.configs.len())
        .flat_map(|c| (0..plan.realizations).map(move |k| (c, k)))
        .collect();
    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(jobs.len()));
    std::thread::scope(|s| {
        for _ in 0..workers.max(1).min(jobs.len().max(1)) {
            s.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(c, k)) = jobs.get(j) else { break };
                let cfg = &plan.configs[c];
                let r = run_one(&ctx, cfg, k);
                if let Some(e) = &r.error {
                    log::warn!("{} realization {k} failed: {e}", cfg.id);
                }
                let finished = done.fetch_add(1, Ordering::SeqCst) + 1;
                if let Some(p) = progress {
                    p(&cfg.id, k, finished, jobs.len());
                }
                results.lock().expect("result lock").push((c, r));
            });
        }
    });
    let mut results = results.into_inner().expect("result lock");
    results.sort_by_key(|(c, r)| (*c, r.realization));
    for cfg in &plan.configs {
        let ok = results.iter().any(|(_, r)| r.config == cfg.id && r.error.is_none());
        if !ok && plan.realizations > 0 {
            return Err(HarnessError::ConfigFailed(cfg.id.clone()));
        }
    }
    Ok(ExperimentResult {
        plan: plan.clone(),
        reference,
        realizations: results.into_iter().map(|(_, r)| r).collect(),
    })
}

/// Type-7 sample quantile (linear interpolation between order statistics).
pub fn quantile(values: &[f64], p: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub config: String,
    pub metric: String,
    pub step: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySummary {
    pub step: usize,
    pub mean: f64,
    pub sd: f64,
    pub below_half: f64,
    pub integral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub config: String,
    pub strategy: Strategy,
    pub completed: usize,
    pub failed: usize,
    pub auc_smse: Vec<Option<f64>>,
    pub median_auc_smse: Option<f64>,
    pub median_total_secs: Option<f64>,
    pub median_step_secs: Option<f64>,
    pub similarity: Vec<SimilaritySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub configs: Vec<ConfigSummary>,
    pub bands: Vec<Band>,
}

/// One long-format row: (config, realization, step, metric, value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub config: String,
    pub realization: usize,
    pub step: usize,
    pub metric: String,
    pub value: f64,
}

pub fn long_table(result: &ExperimentResult) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for r in &result.realizations {
        for (name, curve) in [("smse", &r.smse), ("cc", &r.cc)] {
            if let Some(c) = curve {
                for (&step, &value) in c.steps.iter().zip(&c.values) {
                    rows.push(MetricRow {
                        config: r.config.clone(),
                        realization: r.realization,
                        step,
                        metric: name.into(),
                        value,
                    });
                }
            }
        }
        if let Some(t) = &r.trace {
            for s in &t.steps {
                rows.push(MetricRow {
                    config: r.config.clone(),
                    realization: r.realization,
                    step: s.step,
                    metric: "cumulative_secs".into(),
                    value: s.cumulative_secs,
                });
            }
        }
    }
    rows
}

pub fn similarity_for(result: &ExperimentResult, config: &str, step: usize) -> Result<SimilarityPdf, MetricError> {
    let per: Vec<Vec<f64>> = result
        .for_config(config)
        .filter_map(|r| r.cov_max.get(&step).cloned())
        .collect();
    metrics::similarity_pdf(&per, step, metrics::SIMILARITY_SIGMA, metrics::SIMILARITY_GRID)
}

pub fn summarize(result: &ExperimentResult) -> Summary {
    let mut configs = Vec::new();
    let mut bands = Vec::new();
    for cfg in &result.plan.configs {
        let rs: Vec<&RealizationResult> = result.for_config(&cfg.id).collect();
        let ok: Vec<&&RealizationResult> = rs.iter().filter(|r| r.error.is_none()).collect();
        let auc: Vec<Option<f64>> = rs.iter().map(|r| r.auc_smse).collect();
        let auc_vals: Vec<f64> = auc.iter().flatten().copied().collect();
        let totals: Vec<f64> = ok.iter().filter_map(|r| r.total_secs()).collect();
        let step_secs: Vec<f64> = ok
            .iter()
            .filter_map(|r| r.trace.as_ref())
            .flat_map(|t| t.steps.iter().map(|s| s.elapsed_secs))
            .collect();
        let similarity = result
            .plan
            .similarity_steps
            .iter()
            .filter_map(|&h| similarity_for(result, &cfg.id, h).ok())
            .map(|pdf| SimilaritySummary {
                step: pdf.step,
                mean: pdf.mean(),
                sd: pdf.sd(),
                below_half: pdf.poorly_represented(),
                integral: pdf.integral(),
            })
            .collect();
        configs.push(ConfigSummary {
            config: cfg.id.clone(),
            strategy: cfg.strategy,
            completed: ok.len(),
            failed: rs.len() - ok.len(),
            auc_smse: auc,
            median_auc_smse: median(&auc_vals),
            median_total_secs: median(&totals),
            median_step_secs: median(&step_secs),
            similarity,
        });

        for (name, pick) in [("smse", 0), ("cc", 1)] {
            let mut by_step: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for r in &ok {
                let curve = if pick == 0 { &r.smse } else { &r.cc };
                if let Some(c) = curve {
                    for (&s, &v) in c.steps.iter().zip(&c.values).filter(|(_, v)| v.is_finite()) {
                        by_step.entry(s).or_default().push(v);
                    }
                }
            }
            for (step, vals) in by_step {
                bands.push(Band {
                    config: cfg.id.clone(),
                    metric: name.into(),
                    step,
                    median: median(&vals).unwrap_or(f64::NAN),
                    q25: quantile(&vals, 0.25).unwrap_or(f64::NAN),
                    q75: quantile(&vals, 0.75).unwrap_or(f64::NAN),
                    count: vals.len(),
                });
            }
        }
    }
    Summary {
        name: result.plan.name.clone(),
        configs,
        bands,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `metrics.csv` (long format), `bands.csv`, `realizations.csv` and
/// `summary.json` into `dir`.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<Summary, HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let summary = summarize(result);
    let csv_err = |p: &Path, e: csv::Error| HarnessError::Io {
        path: p.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    };

    let write_rows = |name: &str, rows: &mut dyn Iterator<Item = Result<(), csv::Error>>| -> Result<(), HarnessError> {
        let p = dir.join(name);
        for r in rows {
            r.map_err(|e| csv_err(&p, e))?;
        }
        Ok(())
    };

    let p = dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&p).map_err(|e| csv_err(&p, e))?;
    write_rows("metrics.csv", &mut long_table(result).iter().map(|r| w.serialize(r)))?;
    w.flush().map_err(io_err(&p))?;

    let p = dir.join("bands.csv");
    let mut w = csv::Writer::from_path(&p).map_err(|e| csv_err(&p, e))?;
    write_rows("bands.csv", &mut summary.bands.iter().map(|b| w.serialize(b)))?;
    w.flush().map_err(io_err(&p))?;

    let p = dir.join("realizations.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&p).map_err(io_err(&p))?);
    writeln!(f, "config,realization,auc_smse,total_secs,error").map_err(io_err(&p))?;
    for r in &result.realizations {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.10e}")).unwrap_or_default();
        let err = r.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
        writeln!(f, "{},{},{},{},\"{}\"", r.config, r.realization, fmt(r.auc_smse), fmt(r.total_secs()), err)
            .map_err(io_err(&p))?;
    }
    f.flush().map_err(io_err(&p))?;

    let p = dir.join("summary.json");
    let body = serde_json::json!({
        "summary": summary,
        "reference": result.reference,
    });
    std::fs::write(&p, serde_json::to_vec_pretty(&body).expect("summary serializes")).map_err(io_err(&p))?;
    Ok(summary)
}
