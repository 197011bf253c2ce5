#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use alkgp::gp::{rq_kernel, FeatureMatrix, Hyperparameters};
use alkgp_service::{AppState, ServiceConfig};
use nalgebra::{DMatrix, DVector};
use reqwest::StatusCode;
use serde_json::{json, Value};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub struct TestServer {
    pub base: String,
    pub client: reqwest::Client,
    pub data_dir: PathBuf,
    stop: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

impl TestServer {
    pub async fn start(data_dir: &Path) -> Self {
        Self::start_with(ServiceConfig {
            data_dir: data_dir.to_path_buf(),
            port: 0,
            ..ServiceConfig::default()
        })
        .await
    }

    pub async fn start_with(config: ServiceConfig) -> Self {
        let data_dir = config.data_dir.clone();
        let state: Arc<AppState> = AppState::open(config).unwrap();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            alkgp_service::serve(state, listener, async {
                let _ = rx.await;
            })
            .await
            .unwrap();
        });
        Self {
            base,
            client: reqwest::Client::new(),
            data_dir,
            stop: Some(tx),
            task: Some(task),
        }
    }

    pub async fn stop(mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.task.take() {
            t.await.unwrap();
        }
    }

    pub async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        decode(r).await
    }

    pub async fn post(&self, path: &str, body: &Value) -> (StatusCode, Value) {
        let r = self.client.post(format!("{}{path}", self.base)).json(body).send().await.unwrap();
        decode(r).await
    }

    pub async fn delete(&self, path: &str) -> (StatusCode, Value) {
        let r = self.client.delete(format!("{}{path}", self.base)).send().await.unwrap();
        decode(r).await
    }

    /// Creates a campaign and returns `(id, summary)`.
    pub async fn create(&self, body: &Value) -> (String, Value) {
        let (status, v) = self.post("/campaigns", body).await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        (v["id"].as_str().unwrap().to_string(), v)
    }

    pub async fn label(&self, id: &str, point_id: &str, value: f64) -> (StatusCode, Value) {
        self.post(&format!("/campaigns/{id}/labels"), &json!({ "point_id": point_id, "value": value }))
            .await
    }
}

async fn decode(r: reqwest::Response) -> (StatusCode, Value) {
    let status = r.status();
    let text = r.text().await.unwrap();
    let v = if text.is_empty() {
        Value::Null
    } else {
        serde_json::from_str(&text).unwrap_or(Value::String(text))
    };
    (status, v)
}

pub fn sdof_csv(n: usize, seed: u64) -> String {
    let mut buf = Vec::new();
    alkgp::boucwen::build_dataset(n, seed).unwrap().write_csv(&mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

pub fn campaign_body(csv: &str, strategy: &str, epsilon: f64, d: usize, budget: usize, seed: u64) -> Value {
    json!({
        "name": "test",
        "dataset": { "kind": "csv", "text": csv },
        "reference_label": "label",
        "selector": { "strategy": strategy, "epsilon": epsilon, "d": d, "budget": budget, "seed": seed },
    })
}

pub fn theta_of(v: &Value) -> Hyperparameters {
    serde_json::from_value(v.clone()).unwrap()
}

/// Posterior mean and sd by explicit matrix inversion, labels standardized
/// with their population moments.
/// Also returns the prior sd in label units.
pub fn naive_posterior(
    x: &FeatureMatrix,
    train: &[usize],
    y: &[f64],
    theta: &Hyperparameters,
) -> (Vec<f64>, Vec<f64>, f64) {
    let n = x.rows();
    let k = |i: usize, j: usize| rq_kernel(x.row(i), x.row(j), theta).unwrap();
    let m = train.len();
    let mean_y = y.iter().sum::<f64>() / m as f64;
    let sd = (y.iter().map(|v| (v - mean_y).powi(2)).sum::<f64>() / m as f64).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    let ys = DVector::from_iterator(m, y.iter().map(|v| (v - mean_y) / sd));
    let kaa = DMatrix::from_fn(m, m, |a, b| k(train[a], train[b]) + if a == b { theta.noise_variance() } else { 0.0 });
    let inv = kaa.try_inverse().unwrap();
    let w = &inv * &ys;
    let mut means = Vec::with_capacity(n);
    let mut sds = Vec::with_capacity(n);
    for q in 0..n {
        let kq = DVector::from_iterator(m, train.iter().map(|&a| k(a, q)));
        means.push(kq.dot(&w) * sd + mean_y);
        let var = k(q, q) - kq.dot(&(&inv * &kq));
        sds.push((var.max(0.0) * sd * sd).sqrt());
    }
    (means, sds, (theta.signal_variance()).sqrt() * sd)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Compares predictive sds through their variances, on the scale of `prior_sd`.
pub fn close_sd(a: f64, b: f64, prior_sd: f64, tol: f64) -> bool {
    (a * a - b * b).abs() <= tol * prior_sd * prior_sd
}
