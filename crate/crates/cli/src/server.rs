//! HTTP API over refinement sessions.
//!
//! Sessions live in memory behind a per-session lock. After every round the
//! session's inputs and verdict history are written to
//! `<state_dir>/sessions/<id>.json`; on startup each file is reopened and its
//! verdicts replayed through the same engine.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::anyhow;
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cgsynth_core::eval::SYMPTOM;
use cgsynth_core::localize::{distribution_change, report_unobserved, LocalizeConfig};
use cgsynth_core::refine::{Candidate, CandidateKind, Decision, RefineError, RefinementSession, Verdict, VerdictSource};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::{load_dataset, open_session, CliResult, Failure};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no session `{id}`"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<RefineError> for ApiError {
    fn from(e: RefineError) -> Self {
        let status = match e {
            RefineError::StaleCandidate(_) | RefineError::Finished => StatusCode::CONFLICT,
            RefineError::MissingVerdict(_) | RefineError::DuplicateVerdict(_) | RefineError::BadOrientation(_) => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

/// Files named in a request are client input, readable or not.
fn bad_input(f: Failure) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, f.to_string())
}

type ApiResult<T> = Result<T, ApiError>;

/// Inputs a session was opened with.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub graph: PathBuf,
    #[serde(alias = "dataset")]
    pub data: PathBuf,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low_confidence: Option<PathBuf>,
}

fn default_alpha() -> f64 {
    cgsynth_core::stats::DEFAULT_ALPHA
}

/// One reviewer decision as posted by clients.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionInput {
    #[serde(alias = "candidate")]
    pub candidate_id: String,
    pub decision: Decision,
    /// Direction for an accepted addition, as `[src, dst]`.
    #[serde(default)]
    pub orientation: Option<(String, String)>,
}

#[derive(Serialize, Deserialize)]
struct Persisted {
    session_id: String,
    created_at: u64,
    inputs: CreateSession,
    /// Verdicts of each applied round, in order.
    rounds: Vec<Vec<Verdict>>,
}

struct Entry {
    created_at: u64,
    inputs: CreateSession,
    session: RefinementSession,
}

struct Inner {
    dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Mutex<Entry>>>>,
    next_id: AtomicU64,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn session_number(id: &str) -> Option<u64> {
    id.strip_prefix('s')?.parse().ok()
}

impl AppState {
    /// Opens `state_dir`, restoring persisted sessions.
    pub fn open(state_dir: &Path) -> CliResult<Self> {
        let dir = state_dir.join("sessions");
        std::fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(anyhow!("{}: {e}", dir.display())))?;
        let mut sessions = HashMap::new();
        let mut next = 1;
        let entries = std::fs::read_dir(&dir).map_err(|e| Failure::Runtime(anyhow!("{}: {e}", dir.display())))?;
        for file in entries.flatten() {
            let path = file.path();
            if path.extension().is_none_or(|x| x != "json") {
                continue;
            }
            match restore(&path) {
                Ok((id, entry)) => {
                    next = next.max(session_number(&id).map_or(0, |n| n + 1));
                    sessions.insert(id, Arc::new(Mutex::new(entry)));
                }
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        log::info!("restored {} session(s) from {}", sessions.len(), dir.display());
        Ok(Self(Arc::new(Inner { dir, sessions: RwLock::new(sessions), next_id: AtomicU64::new(next) })))
    }

    fn get(&self, id: &str) -> ApiResult<Arc<Mutex<Entry>>> {
        self.0.sessions.read().expect("session map lock").get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }

    fn persist(&self, id: &str, entry: &Entry) -> ApiResult<()> {
        let record = Persisted {
            session_id: id.to_string(),
            created_at: entry.created_at,
            inputs: entry.inputs.clone(),
            rounds: entry.session.history().iter().map(|r| r.verdicts.clone()).collect(),
        };
        let bytes = serde_json::to_vec_pretty(&record).expect("session record serializes");
        let path = self.0.dir.join(format!("{id}.json"));
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, bytes)
            .and_then(|_| std::fs::rename(&tmp, &path))
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("{}: {e}", path.display())))
    }
}

fn restore(path: &Path) -> anyhow::Result<(String, Entry)> {
    let record: Persisted = serde_json::from_slice(&std::fs::read(path)?)?;
    let i = &record.inputs;
    let mut session = open_session(&i.graph, &i.data, i.alpha, i.low_confidence.as_deref()).map_err(|f| anyhow!("{f}"))?;
    for verdicts in &record.rounds {
        session.current_batch();
        session.apply_verdicts(verdicts)?;
    }
    Ok((record.session_id, Entry { created_at: record.created_at, inputs: record.inputs, session }))
}

/// Runs `f` on the locked session off the async executor.
async fn with_session<T: Send + 'static>(
    state: &AppState,
    id: String,
    f: impl FnOnce(&AppState, &str, &mut Entry) -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    let entry = state.get(&id)?;
    let state = state.clone();
    tokio::task::spawn_blocking(move || {
        let mut guard = entry.lock().map_err(|_| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "session lock poisoned"))?;
        f(&state, &id, &mut guard)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))
}

pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}/graph", get(graph))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/candidates", get(candidates))
        .route("/sessions/{id}/decisions", post(decisions))
        .route("/sessions/{id}/attribution", get(attribution))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

fn batch_view(id: &str, entry: &mut Entry) -> Value {
    let s = &mut entry.session;
    let candidates = s.current_batch().to_vec();
    json!({
        "session_id": id,
        "phase": s.phase(),
        "round": s.history().len() + 1,
        "candidates": candidates,
        "counters": s.counters(),
        "residual_cycle": s.residual_cycle(),
    })
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let inputs: CreateSession = parse_body(&body)?;
    let st = state.clone();
    let (id, view) = tokio::task::spawn_blocking(move || -> ApiResult<(String, Value)> {
        let session = open_session(&inputs.graph, &inputs.data, inputs.alpha, inputs.low_confidence.as_deref())
            .map_err(bad_input)?;
        let id = format!("s{:06}", st.0.next_id.fetch_add(1, Ordering::SeqCst));
        let mut entry = Entry { created_at: now(), inputs, session };
        let view = batch_view(&id, &mut entry);
        st.persist(&id, &entry)?;
        st.0.sessions.write().expect("session map lock").insert(id.clone(), Arc::new(Mutex::new(entry)));
        Ok((id, view))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    log::info!("opened session {id}");
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id, "phase": view["phase"], "candidates": view["candidates"] }))))
}

async fn list_sessions(State(state): State<AppState>) -> Json<Value> {
    let mut ids: Vec<String> = state.0.sessions.read().expect("session map lock").keys().cloned().collect();
    ids.sort();
    Json(json!({ "sessions": ids }))
}

fn status_of(kind: CandidateKind) -> &'static str {
    match kind {
        CandidateKind::RemoveEdge => "candidate_remove",
        CandidateKind::FlipEdge => "candidate_flip",
        CandidateKind::CutForCycle => "candidate_cut",
        CandidateKind::AddEdge => "candidate_add",
    }
}

fn graph_view(id: &str, entry: &mut Entry) -> Value {
    let batch: Vec<Candidate> = entry.session.current_batch().to_vec();
    let s = &entry.session;
    let mut doc: Value = serde_json::from_slice(&s.graph().to_json()).expect("graph json parses");
    if let Some(edges) = doc["edges"].as_array_mut() {
        for e in edges {
            let (src, dst) = (e["src"].as_str().unwrap_or_default(), e["dst"].as_str().unwrap_or_default());
            let hit = batch.iter().find(|c| c.kind != CandidateKind::AddEdge && c.edge.0 == src && c.edge.1 == dst);
            e["status"] = json!(hit.map_or("confirmed", |c| status_of(c.kind)));
            e["candidate_id"] = json!(hit.map(|c| c.id.clone()));
        }
    }
    let additions: Vec<Value> = batch
        .iter()
        .filter(|c| c.kind == CandidateKind::AddEdge)
        .map(|c| {
            json!({
                "src": c.edge.0,
                "dst": c.edge.1,
                "status": status_of(c.kind),
                "candidate_id": c.id,
                "oriented": c.oriented,
            })
        })
        .collect();
    doc["proposed_additions"] = json!(additions);
    doc["session_id"] = json!(id);
    doc["phase"] = json!(s.phase());
    doc["counters"] = json!(s.counters());
    doc["residual_cycle"] = json!(s.residual_cycle());
    doc
}

async fn graph(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    with_session(&state, id, |_, id, e| Ok(Json(graph_view(id, e)))).await
}

/// The session graph in the graph file format, byte-identical to what the
/// CLI writes.
async fn export(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let bytes = with_session(&state, id, |_, _, e| Ok(e.session.graph().to_json())).await?;
    Ok(([(axum::http::header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

async fn candidates(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    with_session(&state, id, |_, id, e| Ok(Json(batch_view(id, e)))).await
}

async fn decisions(State(state): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<Json<Value>> {
    state.get(&id)?;
    let inputs: Vec<DecisionInput> = parse_body(&body)?;
    let verdicts: Vec<Verdict> = inputs
        .into_iter()
        .map(|d| Verdict { candidate_id: d.candidate_id, decision: d.decision, source: VerdictSource::Api, orientation: d.orientation })
        .collect();
    with_session(&state, id, move |st, id, e| {
        e.session.apply_verdicts(&verdicts)?;
        st.persist(id, e)?;
        Ok(Json(batch_view(id, e)))
    })
    .await
}

#[derive(Deserialize)]
struct AttributionQuery {
    #[serde(default = "default_symptom")]
    symptom: String,
    normal: PathBuf,
    anomalous: PathBuf,
    #[serde(default = "default_topk")]
    topk: usize,
    #[serde(default)]
    seed: u64,
}

fn default_symptom() -> String {
    SYMPTOM.to_string()
}

fn default_topk() -> usize {
    3
}

async fn attribution(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    query: Result<Query<AttributionQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Json<Value>> {
    let Query(q) = query.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))?;
    let graph = with_session(&state, id, |_, _, e| Ok(e.session.graph().clone())).await?;
    tokio::task::spawn_blocking(move || -> ApiResult<Json<Value>> {
        let normal = load_dataset(&q.normal).map_err(bad_input)?;
        let anomalous = load_dataset(&q.anomalous).map_err(bad_input)?;
        let cfg = LocalizeConfig { seed: q.seed, ..Default::default() };
        let report = distribution_change(&graph, &normal, &anomalous, &q.symptom, &cfg)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
        Ok(Json(json!(report_unobserved(report, &graph, q.topk))))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

