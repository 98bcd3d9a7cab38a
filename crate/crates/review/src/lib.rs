//! HTTP review service over a run store.
//!
//! Teachers read clusters and flagged answers, assign marks and feedback to
//! whole clusters, and override single answers. Every mutation carries the
//! resource's version token; a stale token is refused with 409. Mutations
//! for a run are serialized and appended to `<run>/review/audit.jsonl`,
//! which is replayed when the run is opened.

mod openapi;
pub mod state;

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use sagrade::store::{RunArtifact, RunStore};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

pub use state::{
    effective_marks, flags, Action, AuditEvent, EffectiveMark, Flag, FlagReason, FlagThresholds,
    Mark, MarkSource, ReviewState,
};
use state::{cluster_id, model_marks, parse_cluster_id};

pub const AUDIT_FILE: &str = "review/audit.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Invalid(String),
    #[error("stale version {given}; current is {current}")]
    Conflict { given: u64, current: u64 },
    #[error(transparent)]
    Pipeline(#[from] sagrade::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self {
            Self::NotFound(_) => StatusCode::NOT_FOUND,
            Self::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Self::Conflict { .. } => StatusCode::CONFLICT,
            Self::Pipeline(sagrade::Error::RunNotFound(_)) => StatusCode::NOT_FOUND,
            Self::Pipeline(_) | Self::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": self.to_string() });
        if let Self::Conflict { current, .. } = self {
            body["current_version"] = current.into();
        }
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// A loaded run and its review state. The mutex is the single writer.
struct Session {
    run: RunArtifact,
    audit_path: PathBuf,
    state: Mutex<ReviewState>,
}

impl Session {
    fn open(store: &RunStore, run_id: &str) -> ApiResult<Self> {
        let run = store.load(run_id).map_err(|e| match e {
            sagrade::Error::RunNotFound(id) => ApiError::NotFound(format!("run {id} not found")),
            other => other.into(),
        })?;
        let audit_path = store.run_dir(run_id).join(AUDIT_FILE);
        let events = read_audit(&audit_path)?;
        let state = ReviewState::replay(run_id, &events);
        Ok(Self {
            run,
            audit_path,
            state: Mutex::new(state),
        })
    }

    fn snapshot(&self) -> ReviewState {
        self.state.lock().expect("review state poisoned").clone()
    }

    /// Checks the version, appends the event to disk, then applies it.
    fn mutate(&self, actor: Option<String>, given: u64, current: impl Fn(&ReviewState) -> u64, action: Action) -> ApiResult<ReviewState> {
        let mut state = self.state.lock().expect("review state poisoned");
        let now = current(&state);
        if given != now {
            return Err(ApiError::Conflict { given, current: now });
        }
        let event = AuditEvent {
            seq: state.next_seq(),
            actor: actor.unwrap_or_else(|| "anonymous".into()),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            action,
        };
        append_audit(&self.audit_path, &event)?;
        state.record(event);
        Ok(state.clone())
    }
}

/// Events in the audit file, or none if it does not exist yet.
pub fn read_audit(path: &Path) -> std::io::Result<Vec<AuditEvent>> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{}: line {}: {e}", path.display(), i + 1),
            )
        })?;
        events.push(event);
    }
    Ok(events)
}

fn append_audit(path: &Path, event: &AuditEvent) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut line = serde_json::to_vec(event)?;
    line.push(b'\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&line)?;
    f.sync_data()
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub store: PathBuf,
    /// Built review UI; a placeholder page is served at `/` without it.
    pub static_dir: Option<PathBuf>,
    pub thresholds: FlagThresholds,
}

impl ServiceConfig {
    pub fn new(store: impl Into<PathBuf>) -> Self {
        Self {
            store: store.into(),
            static_dir: None,
            thresholds: FlagThresholds::default(),
        }
    }
}

struct AppState {
    store: RunStore,
    thresholds: FlagThresholds,
    sessions: Mutex<BTreeMap<String, Arc<Session>>>,
}

impl AppState {
    fn session(&self, run_id: &str) -> ApiResult<Arc<Session>> {
        if let Some(s) = self.sessions.lock().expect("session map poisoned").get(run_id) {
            return Ok(s.clone());
        }
        let opened = Arc::new(Session::open(&self.store, run_id)?);
        let mut map = self.sessions.lock().expect("session map poisoned");
        Ok(map.entry(run_id.to_string()).or_insert(opened).clone())
    }
}

type Shared = Arc<AppState>;

pub fn router(config: ServiceConfig) -> Router {
    let state: Shared = Arc::new(AppState {
        store: RunStore::new(config.store),
        thresholds: config.thresholds,
        sessions: Mutex::new(BTreeMap::new()),
    });
    let api = Router::new()
        .route("/spec", get(spec))
        .route("/runs", get(list_runs))
        .route("/runs/{run}", get(run_summary))
        .route("/runs/{run}/questions/{q}/clusters", get(question_clusters))
        .route("/runs/{run}/questions/{q}/flags", get(question_flags))
        .route("/runs/{run}/clusters/{c}/feedback", post(cluster_feedback))
        .route("/runs/{run}/answers/{a}/override", post(answer_override))
        .route("/runs/{run}/export", get(export))
        .route("/runs/{run}/review", get(review_state))
        .with_state(state);
    match config.static_dir.filter(|d| d.is_dir()) {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder)),
    }
}

/// Serves `config` on `addr` until the process is stopped.
pub async fn serve(config: ServiceConfig, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("review service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(config)).await
}

async fn spec() -> Json<serde_json::Value> {
    Json(openapi::document())
}

async fn placeholder() -> Html<&'static str> {
    Html(concat!(
        "<!doctype html><html><head><meta charset=\"utf-8\"><title>sagrade review</title></head>",
        "<body><h1>sagrade review service</h1>",
        "<p>No UI bundle is configured. The JSON API is described at <a href=\"/spec\">/spec</a>.</p>",
        "</body></html>"
    ))
}

async fn list_runs(State(app): State<Shared>) -> ApiResult<Json<Vec<String>>> {
    Ok(Json(app.store.list()?))
}

#[derive(Serialize)]
struct QuestionSummary<'a> {
    question_id: &'a str,
    question_text: &'a str,
    answers: usize,
    clustered: bool,
    fitted: bool,
}

async fn run_summary(State(app): State<Shared>, UrlPath(run): UrlPath<String>) -> ApiResult<Json<serde_json::Value>> {
    let s = app.session(&run)?;
    let questions: Vec<QuestionSummary> = s
        .run
        .dataset
        .questions
        .iter()
        .map(|q| {
            let stages = s.run.stages(&q.question_id);
            QuestionSummary {
                question_id: &q.question_id,
                question_text: &q.question_text,
                answers: s.run.dataset.answers_for(&q.question_id).count(),
                clustered: stages.and_then(|st| st.clusters()).is_some(),
                fitted: stages.and_then(|st| st.fit()).is_some(),
            }
        })
        .collect();
    Ok(Json(json!({
        "run_id": s.run.run_id,
        "created_at": s.run.created_at,
        "dataset_hash": s.run.dataset_hash,
        "config": s.run.config,
        "questions": questions,
    })))
}

#[derive(Debug, Deserialize)]
struct Page {
    offset: Option<usize>,
    limit: Option<usize>,
}

#[derive(Serialize)]
struct MemberView {
    answer_id: String,
    text: String,
    h: Option<u32>,
    tm: f64,
    mm_prediction: Option<f64>,
    distance_to_centroid: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    r#override: Option<state::Override>,
}

#[derive(Serialize)]
struct ClusterView {
    cluster_id: String,
    index: usize,
    label: Option<sagrade::cluster::ClusterLabel>,
    size: usize,
    prototype: PrototypeView,
    frequencies: Vec<(String, usize)>,
    feedback: state::ClusterFeedback,
    members: Vec<MemberView>,
}

#[derive(Serialize)]
struct PrototypeView {
    answer_id: String,
    text: String,
}

async fn question_clusters(
    State(app): State<Shared>,
    UrlPath((run, q)): UrlPath<(String, String)>,
    Query(page): Query<Page>,
) -> ApiResult<Json<serde_json::Value>> {
    let s = app.session(&run)?;
    let stages = s
        .run
        .stages(&q)
        .ok_or_else(|| ApiError::NotFound(format!("question {q} not in run {run}")))?;
    let clusters = stages
        .clusters()
        .ok_or_else(|| ApiError::NotFound(format!("question {q} has no clustering output")))?;
    let review = s.snapshot();
    let model = model_marks(&s.run);
    let hamming: BTreeMap<&str, u32> = stages
        .scores
        .iter()
        .flatten()
        .map(|sc| (sc.answer_id.as_str(), sc.hamming))
        .collect();
    let tokens = stages.tokens.as_ref().map(|t| t.clustering.as_slice()).unwrap_or_default();

    let offset = page.offset.unwrap_or(0);
    let limit = page.limit.unwrap_or(usize::MAX);
    let views: Vec<ClusterView> = (0..clusters.k)
        .skip(offset)
        .take(limit)
        .map(|c| {
            let ids = clusters.members(c);
            let members = ids
                .iter()
                .filter_map(|id| s.run.dataset.answer(id))
                .map(|a| MemberView {
                    answer_id: a.answer_id.clone(),
                    text: a.text.clone(),
                    h: hamming.get(a.answer_id.as_str()).copied(),
                    tm: a.tm(),
                    mm_prediction: model.get(a.answer_id.as_str()).copied(),
                    distance_to_centroid: clusters.distances[&a.answer_id],
                    r#override: review.overrides.get(&a.answer_id).cloned(),
                })
                .collect();
            let proto = &clusters.prototypes[c];
            let cid = cluster_id(&q, c);
            ClusterView {
                index: c,
                label: clusters.label(c),
                size: ids.len(),
                prototype: PrototypeView {
                    answer_id: proto.clone(),
                    text: s.run.dataset.answer(proto).map(|a| a.text.clone()).unwrap_or_default(),
                },
                frequencies: sagrade::report::word_frequencies(
                    tokens.iter().filter(|d| ids.contains(&d.source_id.as_str())),
                    sagrade::report::Scope::Cluster(c),
                )
                .rows,
                feedback: review.clusters.get(&cid).cloned().unwrap_or_default(),
                cluster_id: cid,
                members,
            }
        })
        .collect();
    Ok(Json(json!({
        "question_id": q,
        "total": clusters.k,
        "offset": offset,
        "clusters": views,
    })))
}

async fn question_flags(
    State(app): State<Shared>,
    UrlPath((run, q)): UrlPath<(String, String)>,
) -> ApiResult<Json<serde_json::Value>> {
    let s = app.session(&run)?;
    let review = s.snapshot();
    let queue = flags(&s.run, &review, &q, &app.thresholds)
        .ok_or_else(|| ApiError::NotFound(format!("question {q} has no clustering output in run {run}")))?;
    Ok(Json(json!({ "question_id": q, "flags": queue })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackBody {
    mark: Option<f64>,
    #[serde(default)]
    feedback_text: String,
    version: u64,
    actor: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OverrideBody {
    mark: f64,
    #[serde(default)]
    note: String,
    version: u64,
    actor: Option<String>,
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload
        .map(|Json(b)| b)
        .map_err(|e| ApiError::Invalid(e.body_text()))
}

fn mark(value: f64) -> ApiResult<Mark> {
    Mark::new(value).ok_or_else(|| ApiError::Invalid(format!("mark {value} outside [0, 5]")))
}

async fn cluster_feedback(
    State(app): State<Shared>,
    UrlPath((run, c)): UrlPath<(String, String)>,
    payload: Result<Json<FeedbackBody>, JsonRejection>,
) -> ApiResult<Json<ReviewState>> {
    let s = app.session(&run)?;
    let known = parse_cluster_id(&c)
        .and_then(|(q, i)| s.run.stages(q)?.clusters().map(|cs| i < cs.k))
        .unwrap_or(false);
    if !known {
        return Err(ApiError::NotFound(format!("cluster {c} not in run {run}")));
    }
    let b = body(payload)?;
    let m = b.mark.map(mark).transpose()?;
    let action = Action::ClusterFeedback {
        cluster_id: c.clone(),
        mark: m,
        feedback_text: b.feedback_text,
    };
    Ok(Json(s.mutate(b.actor, b.version, |st| st.cluster_version(&c), action)?))
}

async fn answer_override(
    State(app): State<Shared>,
    UrlPath((run, a)): UrlPath<(String, String)>,
    payload: Result<Json<OverrideBody>, JsonRejection>,
) -> ApiResult<Json<ReviewState>> {
    let s = app.session(&run)?;
    if s.run.dataset.answer(&a).is_none() {
        return Err(ApiError::NotFound(format!("answer {a} not in run {run}")));
    }
    let b = body(payload)?;
    let action = Action::Override {
        answer_id: a.clone(),
        mark: mark(b.mark)?,
        note: b.note,
    };
    Ok(Json(s.mutate(b.actor, b.version, |st| st.answer_version(&a), action)?))
}

async fn export(State(app): State<Shared>, UrlPath(run): UrlPath<String>) -> ApiResult<Response> {
    let s = app.session(&run)?;
    let rows = effective_marks(&s.run, &s.snapshot());
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| ApiError::Io(std::io::Error::other(e));
    w.write_record(["answer_id", "source", "mark", "feedback"]).map_err(csv_err)?;
    for r in rows {
        let source = match r.source {
            MarkSource::Model => "model",
            MarkSource::Cluster => "cluster",
            MarkSource::Override => "override",
        };
        w.write_record([
            r.answer_id,
            source.to_string(),
            r.mark.map(|m| m.to_string()).unwrap_or_default(),
            r.feedback,
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| ApiError::Io(std::io::Error::other(e.to_string())))?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], bytes).into_response())
}

async fn review_state(State(app): State<Shared>, UrlPath(run): UrlPath<String>) -> ApiResult<Json<ReviewState>> {
    Ok(Json(app.session(&run)?.snapshot()))
}
