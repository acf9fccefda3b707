use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cgsynth::server::{router, AppState};
use cgsynth_core::simulator::{run, FaultSpec, Scenario, ScenarioConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const SPURIOUS: (&str, &str) = ("Router-Queue_0.latency", "GPU_0.utilization");

struct Fixture {
    dir: tempfile::TempDir,
    graph: PathBuf,
    data: PathBuf,
}

/// Truth graph of S plus one spurious edge, with normal-operation data.
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ScenarioConfig::new(Scenario::S);
    cfg.duration_s = 200.0;
    let out = run(&cfg, &FaultSpec::none()).unwrap();
    let mut g = out.truth.causal_graph.clone();
    g.add_edge(SPURIOUS.0, SPURIOUS.1).unwrap();
    let graph = dir.path().join("graph.json");
    let data = dir.path().join("normal.csv");
    std::fs::write(&graph, g.to_json()).unwrap();
    std::fs::write(&data, out.dataset.slice_rows(0, 4000).to_csv()).unwrap();
    Fixture { dir, graph, data }
}

fn app(state_dir: &Path) -> Router {
    router(AppState::open(state_dir).unwrap(), None)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, bytes) = call(app, method, uri, body.map(|b| b.to_string())).await;
    (s, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn open(app: &Router, f: &Fixture) -> String {
    let (s, v) = call_json(app, "POST", "/sessions", Some(json!({ "graph": f.graph, "dataset": f.data }))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

/// Posts verdicts chosen by `decide` until the session is done; returns the
/// number of rounds.
async fn drive(app: &Router, id: &str, decide: impl Fn(&Value) -> &'static str) -> usize {
    let mut rounds = 0;
    loop {
        let (s, v) = call_json(app, "GET", &format!("/sessions/{id}/candidates"), None).await;
        assert_eq!(s, StatusCode::OK);
        let batch = v["candidates"].as_array().unwrap();
        if batch.is_empty() {
            assert_eq!(v["phase"], "done");
            return rounds;
        }
        assert!(batch.len() <= 5);
        let verdicts: Vec<Value> =
            batch.iter().map(|c| json!({ "candidate": c["id"], "decision": decide(c) })).collect();
        let (s, v) = call_json(app, "POST", &format!("/sessions/{id}/decisions"), Some(json!(verdicts))).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        rounds += 1;
    }
}

#[tokio::test]
async fn healthz_reports_ok() {
    let state = tempfile::tempdir().unwrap();
    let (s, body) = call(&app(state.path()), "GET", "/healthz", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, b"ok");
}

#[tokio::test]
async fn unknown_session_is_404() {
    let state = tempfile::tempdir().unwrap();
    let app = app(state.path());
    for (m, uri) in [("GET", "/sessions/s999/graph"), ("GET", "/sessions/s999/candidates"), ("POST", "/sessions/s999/decisions")] {
        let (s, _) = call(&app, m, uri, Some("[]".into())).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{m} {uri}");
    }
}

#[tokio::test]
async fn malformed_bodies_are_400() {
    let f = fixture();
    let app = app(&f.dir.path().join("state"));
    let (s, _) = call(&app, "POST", "/sessions", Some("{not json".into())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call_json(&app, "POST", "/sessions", Some(json!({ "graph": f.graph }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call_json(&app, "POST", "/sessions", Some(json!({ "graph": "/nonexistent.json", "data": f.data }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let id = open(&app, &f).await;
    let (s, _) = call(&app, "POST", &format!("/sessions/{id}/decisions"), Some("[{\"candidate\": 3}]".into())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call_json(&app, "POST", &format!("/sessions/{id}/decisions"), Some(json!([]))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "an incomplete batch is rejected");
}

#[tokio::test]
async fn stale_candidate_is_409() {
    let f = fixture();
    let app = app(&f.dir.path().join("state"));
    let id = open(&app, &f).await;
    let (_, first) = call_json(&app, "GET", &format!("/sessions/{id}/candidates"), None).await;
    let batch = first["candidates"].as_array().unwrap().clone();
    assert!(!batch.is_empty());
    let reject: Vec<Value> = batch.iter().map(|c| json!({ "candidate_id": c["id"], "decision": "reject" })).collect();
    let (s, _) = call_json(&app, "POST", &format!("/sessions/{id}/decisions"), Some(json!(reject))).await;
    assert_eq!(s, StatusCode::OK);
    // the same verdicts again refer to the old batch
    let (s, v) = call_json(&app, "POST", &format!("/sessions/{id}/decisions"), Some(json!(reject))).await;
    assert_eq!(s, StatusCode::CONFLICT, "{v}");
}

#[tokio::test]
async fn all_reject_session_leaves_graph_unchanged() {
    let f = fixture();
    let app = app(&f.dir.path().join("state"));
    let id = open(&app, &f).await;
    let (_, before) = call(&app, "GET", &format!("/sessions/{id}/export"), None).await;
    assert_eq!(before, std::fs::read(&f.graph).unwrap());
    let rounds = drive(&app, &id, |_| "reject").await;
    assert!(rounds >= 2);
    let (_, after) = call(&app, "GET", &format!("/sessions/{id}/export"), None).await;
    assert_eq!(after, before);
    let (_, view) = call_json(&app, "GET", &format!("/sessions/{id}/graph"), None).await;
    assert_eq!(view["phase"], "done");
    assert_eq!(view["counters"]["accepted"], 0);
    assert!(view["edges"].as_array().unwrap().iter().all(|e| e["status"] == "confirmed"));
    let (s, _) = call_json(&app, "POST", &format!("/sessions/{id}/decisions"), Some(json!([{ "candidate": "r1-0", "decision": "reject" }]))).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn graph_view_marks_candidates() {
    let f = fixture();
    let app = app(&f.dir.path().join("state"));
    let id = open(&app, &f).await;
    let (_, c) = call_json(&app, "GET", &format!("/sessions/{id}/candidates"), None).await;
    let (_, g) = call_json(&app, "GET", &format!("/sessions/{id}/graph"), None).await;
    assert_eq!(c["phase"], "edge_screen");
    let marked: Vec<&Value> = g["edges"].as_array().unwrap().iter().filter(|e| e["status"] != "confirmed").collect();
    assert_eq!(marked.len(), c["candidates"].as_array().unwrap().len());
    assert!(marked.iter().all(|e| e["status"] == "candidate_remove" && e["candidate_id"].is_string()));
    assert!(g["edges"].as_array().unwrap().iter().all(|e| e["collapsed_via"].is_array()));
    assert!(g["proposed_additions"].as_array().unwrap().is_empty());
}

/// Accepts removal of the spurious edge and nothing else.
fn decisions_file() -> Value {
    json!([{ "kind": "remove_edge", "src": SPURIOUS.0, "dst": SPURIOUS.1, "decision": "accept" }])
}

fn file_decision(c: &Value) -> &'static str {
    let hit = c["kind"] == "remove_edge" && c["edge"][0] == SPURIOUS.0 && c["edge"][1] == SPURIOUS.1;
    if hit { "accept" } else { "reject" }
}

#[tokio::test]
async fn http_session_matches_decisions_file_run() {
    let f = fixture();
    let app = app(&f.dir.path().join("state"));
    let id = open(&app, &f).await;
    drive(&app, &id, file_decision).await;
    let (_, http_graph) = call(&app, "GET", &format!("/sessions/{id}/export"), None).await;

    let decisions = f.dir.path().join("decisions.json");
    std::fs::write(&decisions, decisions_file().to_string()).unwrap();
    let out = f.dir.path().join("cli");
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_cgsynth"))
        .args(["validate", "--graph"])
        .arg(&f.graph)
        .arg("--data")
        .arg(&f.data)
        .arg("--decisions")
        .arg(&decisions)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(http_graph, std::fs::read(out.join("refined_graph.json")).unwrap());
}

#[tokio::test]
async fn sessions_survive_restart() {
    let f = fixture();
    let state_dir = f.dir.path().join("state");
    let first = app(&state_dir);
    let id = open(&first, &f).await;
    let (_, c) = call_json(&first, "GET", &format!("/sessions/{id}/candidates"), None).await;
    let verdicts: Vec<Value> = c["candidates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| json!({ "candidate": c["id"], "decision": file_decision(c) }))
        .collect();
    let (s, next) = call_json(&first, "POST", &format!("/sessions/{id}/decisions"), Some(json!(verdicts))).await;
    assert_eq!(s, StatusCode::OK);
    let (_, graph) = call(&first, "GET", &format!("/sessions/{id}/export"), None).await;
    drop(first);

    let second = app(&state_dir);
    let (_, restored) = call(&second, "GET", &format!("/sessions/{id}/export"), None).await;
    assert_eq!(restored, graph);
    let (_, c) = call_json(&second, "GET", &format!("/sessions/{id}/candidates"), None).await;
    assert_eq!(c["candidates"], next["candidates"]);
    let other = open(&second, &f).await;
    assert_ne!(other, id);
}

#[tokio::test]
async fn attribution_uses_session_graph() {
    let f = fixture();
    let app = app(&f.dir.path().join("state"));
    let id = open(&app, &f).await;
    let mut cfg = ScenarioConfig::new(Scenario::S);
    cfg.duration_s = 200.0;
    let fault = FaultSpec::default_for(cgsynth_core::simulator::FaultKind::BatchMisconfig, 1.0, 120.0);
    let anomalous = f.dir.path().join("anomalous.csv");
    std::fs::write(&anomalous, run(&cfg, &fault).unwrap().dataset.to_csv()).unwrap();
    let uri = format!(
        "/sessions/{id}/attribution?symptom=Client.latency&normal={}&anomalous={}",
        f.data.display(),
        anomalous.display()
    );
    let (s, report) = call_json(&app, "GET", &uri, None).await;
    assert_eq!(s, StatusCode::OK, "{report}");
    assert_eq!(report["symptom"], "Client.latency");
    assert_eq!(report["ranking"].as_array().unwrap().len(), report["scores"].as_object().unwrap().len());
    let (s, _) = call_json(&app, "GET", &format!("/sessions/{id}/attribution?symptom=Client.latency"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}
