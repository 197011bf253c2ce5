mod common;

use std::io::Write;
use std::sync::Arc;

use alkgp::selectors::{run_active_loop, LoopOptions, PoolOracle, SelectorConfig, Strategy};
use alkgp_service::campaign::{default_mle, model_features, random_theta, session_config};
use alkgp_service::store;
use common::*;
use reqwest::StatusCode;
use serde_json::{json, Value};

const N: usize = 40;
const BUDGET: usize = 8;

struct Scripted {
    indices: Vec<usize>,
    means: Vec<Vec<f64>>,
    sds_observed_zero: bool,
}

async fn label_steps(srv: &TestServer, id: &str, labels: &[f64], steps: usize, out: &mut Scripted) {
    for _ in 0..steps {
        let (s, rec) = srv.get(&format!("/campaigns/{id}/recommendation")).await;
        assert_eq!(s, StatusCode::OK, "{rec}");
        let index = rec["index"].as_u64().unwrap() as usize;
        let (s, resp) = srv.label(id, rec["point_id"].as_str().unwrap(), labels[index]).await;
        assert_eq!(s, StatusCode::OK, "{resp}");
        let (_, preds) = srv.get(&format!("/campaigns/{id}/predictions")).await;
        let points = preds["points"].as_array().unwrap();
        out.means.push(points.iter().map(|p| p["mean"].as_f64().unwrap()).collect());
        out.sds_observed_zero &= points.iter().all(|p| p["observed"] == false || p["sd"] == 0.0);
        out.indices.push(index);
    }
}

fn snapshot(srv: &TestServer, id: &str) -> Vec<u8> {
    std::fs::read(srv.data_dir.join("campaigns").join(id).join(store::SNAPSHOT_FILE)).unwrap()
}

async fn check_strategy(strategy: Strategy, epsilon: f64, d: usize, seed: u64) {
    let csv = sdof_csv(N, 13);
    let pool = alkgp::dataset::read_pool_csv(csv.as_bytes(), &alkgp::dataset::Schema::sdof(), Some("label")).unwrap();
    let labels = pool.labels.clone().unwrap();

    let selector = SelectorConfig::new(strategy, epsilon, d, BUDGET, seed);
    let config = session_config(selector, random_theta(pool.dim(), seed), default_mle());
    let features = Arc::new(model_features(&pool, true));
    let trace = run_active_loop(features, &mut PoolOracle::new(&labels), &config, &LoopOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let srv = TestServer::start(dir.path()).await;
    let body = campaign_body(&csv, strategy.name(), epsilon, d, BUDGET, seed);
    let (id, _) = srv.create(&body).await;
    let mut got = Scripted {
        indices: Vec::new(),
        means: Vec::new(),
        sds_observed_zero: true,
    };
    label_steps(&srv, &id, &labels, BUDGET / 2, &mut got).await;

    // Restart mid-campaign: the replayed state must match what was written.
    let (_, summary_before) = srv.get(&format!("/campaigns/{id}")).await;
    let (_, metrics_before) = srv.get(&format!("/campaigns/{id}/metrics")).await;
    let snap_before = snapshot(&srv, &id);
    srv.stop().await;
    let replayed = store::replay_dir(&dir.path().join("campaigns").join(&id)).unwrap();
    assert_eq!(store::snapshot_bytes(&replayed.state), snap_before, "{strategy}: replay differs");

    let srv = TestServer::start(dir.path()).await;
    assert_eq!(snapshot(&srv, &id), snap_before);
    assert_eq!(srv.get(&format!("/campaigns/{id}")).await.1, summary_before);
    assert_eq!(srv.get(&format!("/campaigns/{id}/metrics")).await.1["history"], metrics_before["history"]);

    label_steps(&srv, &id, &labels, BUDGET - BUDGET / 2, &mut got).await;
    let (_, summary) = srv.get(&format!("/campaigns/{id}")).await;
    assert_eq!(summary["status"], "budget_exhausted");
    srv.stop().await;

    assert_eq!(got.indices, trace.indices(), "{strategy}: recommendation sequence");
    for (k, step) in trace.steps.iter().enumerate() {
        assert_eq!(Some(&got.means[k]), step.predictions.as_ref(), "{strategy}: predictions at step {}", k + 1);
    }
    assert!(got.sds_observed_zero);
    assert_eq!(theta_of(&summary["theta"]), trace.final_theta, "{strategy}: final θ");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn mi_alk_matches_library_loop() {
    check_strategy(Strategy::MiAlk, 0.5, 10, 21).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn mi_lk_matches_library_loop() {
    check_strategy(Strategy::MiLk, 0.01, 10, 22).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn alm_and_random_match_library_loop() {
    check_strategy(Strategy::Alm, 0.0, 10, 23).await;
    check_strategy(Strategy::Random, 0.0, 10, 24).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn recovers_from_torn_log_and_missing_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let srv = TestServer::start(dir.path()).await;
    let csv = sdof_csv(20, 3);
    let (id, created) = srv.create(&campaign_body(&csv, "MI-ALK", 0.5, 10, 5, 2)).await;
    let rec = created["recommendation"]["point_id"].as_str().unwrap().to_string();
    let (s, _) = srv.label(&id, &rec, 0.7).await;
    assert_eq!(s, StatusCode::OK);
    let (_, summary) = srv.get(&format!("/campaigns/{id}")).await;
    let snap = snapshot(&srv, &id);
    srv.stop().await;

    let cdir = dir.path().join("campaigns").join(&id);
    let mut log = std::fs::OpenOptions::new().append(true).open(cdir.join(store::EVENTS_FILE)).unwrap();
    log.write_all(br#"{"type":"label","seq":2,"at_ms":5,"ind"#).unwrap();
    drop(log);
    std::fs::remove_file(cdir.join(store::SNAPSHOT_FILE)).unwrap();

    let srv = TestServer::start(dir.path()).await;
    assert_eq!(snapshot(&srv, &id), snap);
    assert_eq!(srv.get(&format!("/campaigns/{id}")).await.1, summary);
    let next = summary["recommendation"]["point_id"].clone();
    let (s, resp) = srv.post(&format!("/campaigns/{id}/labels"), &json!({ "point_id": next, "value": 0.1 })).await;
    assert_eq!(s, StatusCode::OK, "{resp}");
    assert_eq!(resp["summary"]["step"], Value::from(2));
    let (_, summary) = srv.get(&format!("/campaigns/{id}")).await;
    srv.stop().await;

    // The torn bytes were cut off, so the new event replays cleanly.
    let events = store::read_events(&cdir).unwrap();
    assert_eq!(events.len(), 3);
    let srv = TestServer::start(dir.path()).await;
    assert_eq!(srv.get(&format!("/campaigns/{id}")).await.1, summary);
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn reads_proceed_while_a_label_is_processed() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Arc::new(TestServer::start(dir.path()).await);
    let csv = sdof_csv(60, 9);
    let (id, created) = srv.create(&campaign_body(&csv, "MI-ALK", 0.5, 20, 5, 4)).await;
    let rec = created["recommendation"]["point_id"].as_str().unwrap().to_string();

    let writer = {
        let srv = Arc::clone(&srv);
        let id = id.clone();
        tokio::spawn(async move { srv.label(&id, &rec, 0.3).await })
    };
    // Every read sees either the state before or after the label, never a mix.
    for _ in 0..20 {
        let (s, p) = srv.get(&format!("/campaigns/{id}/predictions")).await;
        assert_eq!(s, StatusCode::OK);
        let observed = p["points"].as_array().unwrap().iter().filter(|q| q["observed"] == true).count();
        assert_eq!(observed, p["step"].as_u64().unwrap() as usize);
    }
    let (s, _) = writer.await.unwrap();
    assert_eq!(s, StatusCode::OK);
    Arc::try_unwrap(srv).ok().unwrap().stop().await;
}
