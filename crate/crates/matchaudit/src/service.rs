//! HTTP service over sessions stored under one root directory.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Multipart, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use matchaudit_core::audit::{AuditConfig, AuditReport, DEFAULT_FAIRNESS_THRESHOLD};
use matchaudit_core::explain::Explanation;
use matchaudit_core::resolve::{Resolution, DEFAULT_CAP};
use matchaudit_core::stats::{MultiWorkloadConfig, MultiWorkloadReport};
use matchaudit_core::SensitiveAttributeSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::demo::{demo_input, DemoRequest};
use crate::error::{Error, Result};
use crate::ingest::{IngestInput, IngestMode, PairSources, Source, DEFAULT_RATIOS};
use crate::session::{
    catalog, parse_kinds, CatalogEntry, ExplainRequest, IngestSummary, MatchSummary, ResolveRequest,
    Session, SessionMeta, SessionState, StrategyRequest, TrainRequest,
};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.5;

/// Defaults applied to request bodies that omit the field.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub root: PathBuf,
    pub cap: usize,
    pub match_threshold: f64,
    pub fairness_threshold: f64,
}

impl ServiceConfig {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            cap: DEFAULT_CAP,
            match_threshold: DEFAULT_MATCH_THRESHOLD,
            fairness_threshold: DEFAULT_FAIRNESS_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: ErrorBody,
}

impl Error {
    pub fn status(&self) -> StatusCode {
        match self {
            Error::Validation { .. } => StatusCode::BAD_REQUEST,
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::OutOfOrder(_) => StatusCode::CONFLICT,
            Error::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn body(&self) -> ErrorBody {
        ErrorBody {
            code: self.code().to_string(),
            message: self.to_string(),
        }
    }
}

impl IntoResponse for Error {
    fn into_response(self) -> Response {
        (self.status(), Json(ErrorResponse { error: self.body() })).into_response()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Train,
    Audit,
    Resolve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub session_id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub progress: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<MatchSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobCreated {
    pub job_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatcherCatalog {
    pub builtin: Vec<CatalogEntry>,
    pub session: Vec<String>,
}

type SharedJob = Arc<Mutex<JobStatus>>;

struct Inner {
    config: ServiceConfig,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    jobs: Mutex<HashMap<String, SharedJob>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        AppState(Arc::new(Inner {
            config,
            locks: Mutex::new(HashMap::new()),
            jobs: Mutex::new(HashMap::new()),
        }))
    }

    fn session_lock(&self, id: &str) -> Arc<Mutex<()>> {
        lock(&self.0.locks).entry(id.to_string()).or_default().clone()
    }

    fn session_dir(&self, id: &str) -> Result<PathBuf> {
        let dir = self.0.config.root.join(id);
        if !valid_id(id) || !dir.join(crate::session::SESSION_FILE).exists() {
            return Err(Error::NotFound(format!("session `{id}`")));
        }
        Ok(dir)
    }

    /// Runs `f` on the blocking pool with the session's lock held.
    async fn with_session<T, F>(&self, id: &str, f: F) -> Result<T>
    where
        T: Send + 'static,
        F: FnOnce(&mut Session) -> Result<T> + Send + 'static,
    {
        let dir = self.session_dir(id)?;
        let guard = self.session_lock(id);
        tokio::task::spawn_blocking(move || {
            let _held = lock(&guard);
            let mut s = Session::open(&dir)?;
            f(&mut s)
        })
        .await
        .map_err(|e| Error::Internal(format!("worker: {e}")))?
    }

    fn new_session(&self) -> Result<Session> {
        let root = &self.0.config.root;
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        Session::create(&root.join(id))
    }

    fn fill(&self, v: &mut Value, fields: &[(&str, Value)]) {
        if let Value::Object(map) = v {
            for (k, d) in fields {
                map.entry(k.to_string()).or_insert_with(|| d.clone());
            }
        }
    }

    fn audit_defaults(&self, v: &mut Value) {
        let c = &self.0.config;
        self.fill(
            v,
            &[
                ("match_threshold", json!(c.match_threshold)),
                ("fairness_threshold", json!(c.fairness_threshold)),
            ],
        );
    }
}

fn body_value(body: &Bytes) -> Result<Value> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(json!({}));
    }
    let v: Value = serde_json::from_slice(body)
        .map_err(|e| Error::validation("invalid_json", format!("request body: {e}")))?;
    if !v.is_object() {
        return Err(Error::validation("invalid_json", "request body must be a JSON object"));
    }
    Ok(v)
}

fn typed<T: DeserializeOwned>(v: Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::validation("invalid_request", e.to_string()))
}

pub fn router(config: ServiceConfig) -> Router {
    Router::new()
        .route("/spec", get(spec))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/dataset", post(upload_dataset))
        .route("/sessions/{id}/matchers", get(matchers))
        .route("/sessions/{id}/match", post(start_match))
        .route("/sessions/{id}/audit", post(audit))
        .route("/sessions/{id}/audit/multiworkload", post(multiworkload))
        .route("/sessions/{id}/explain", post(explain))
        .route("/sessions/{id}/resolve", post(resolve))
        .route("/sessions/{id}/resolve/strategy", post(strategy))
        .route("/jobs/{id}", get(job))
        .route("/demo/datasets", post(demo))
        .fallback(|| async { Error::NotFound("route".to_string()) })
        .with_state(AppState::new(config))
}

/// Serves until ctrl-c.
pub async fn serve(bind: &str, config: ServiceConfig) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| Error::validation("bind_failed", format!("{bind}: {e}")))?;
    axum::serve(listener, router(config))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

async fn spec() -> Json<Value> {
    Json(openapi())
}

async fn create_session(State(st): State<AppState>) -> Result<Json<SessionCreated>> {
    let s = tokio::task::spawn_blocking(move || st.new_session())
        .await
        .map_err(|e| Error::Internal(e.to_string()))??;
    Ok(Json(SessionCreated {
        session_id: s.id().to_string(),
    }))
}

async fn get_session(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionMeta>> {
    st.with_session(&id, |s| Ok(s.meta().clone())).await.map(Json)
}

struct Part {
    file_name: Option<String>,
    bytes: Vec<u8>,
}

fn text(parts: &HashMap<String, Part>, name: &str) -> Result<Option<String>> {
    parts
        .get(name)
        .map(|p| {
            String::from_utf8(p.bytes.clone())
                .map(|s| s.trim().to_string())
                .map_err(|_| Error::validation("invalid_part", format!("part `{name}` is not UTF-8")))
        })
        .transpose()
}

fn source(parts: &HashMap<String, Part>, name: &str) -> Option<Source> {
    parts.get(name).map(|p| {
        Source::new(
            p.file_name.clone().unwrap_or_else(|| name.to_string()),
            p.bytes.clone(),
        )
    })
}

fn parse_ratios(text: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = text
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::validation("invalid_ratios", format!("ratios `{text}` must be three numbers")))?;
    v.try_into()
        .map_err(|_| Error::validation("invalid_ratios", format!("ratios `{text}` must be three numbers")))
}

/// Sensitive spec from its compact form (`race,sex`) or JSON.
pub fn parse_sensitive(text: &str, intersectional: bool) -> Result<SensitiveAttributeSpec> {
    if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| Error::validation("invalid_groups", format!("sensitive: {e}")))
    } else {
        Ok(SensitiveAttributeSpec::parse_compact(text, intersectional)?)
    }
}

fn score_name(part_name: &str, file_name: Option<&str>) -> Result<String> {
    if let Some(n) = part_name.strip_prefix("scores:") {
        return Ok(n.to_string());
    }
    let f = file_name.ok_or_else(|| {
        Error::validation("invalid_part", "a `scores` part needs a file name or a `scores:<name>` part name")
    })?;
    Ok(std::path::Path::new(f)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default())
}

/// Builds ingest input from multipart parts: `table_a`, `table_b`, either
/// `test` (plus optional `train`, `valid`) or `pairs` (plus optional
/// `ratios`, `split_seed`), `sensitive`, optional `intersectional`, `mode`
/// and any number of `scores` file parts.
fn ingest_input(parts: HashMap<String, Part>, scores: Vec<(String, Source)>) -> Result<IngestInput> {
    let missing = |n: &str| Error::validation("missing_part", format!("multipart part `{n}` is required"));
    let left = source(&parts, "table_a").ok_or_else(|| missing("table_a"))?;
    let right = source(&parts, "table_b").ok_or_else(|| missing("table_b"))?;
    let pairs = match source(&parts, "pairs") {
        Some(p) => PairSources::Combined {
            pairs: p,
            ratios: text(&parts, "ratios")?.map(|t| parse_ratios(&t)).transpose()?.unwrap_or(DEFAULT_RATIOS),
            seed: text(&parts, "split_seed")?
                .map(|t| t.parse::<u64>())
                .transpose()
                .map_err(|_| Error::validation("invalid_part", "split_seed must be an unsigned integer"))?
                .unwrap_or(0),
        },
        None => PairSources::Splits {
            train: source(&parts, "train"),
            valid: source(&parts, "valid"),
            test: source(&parts, "test").ok_or_else(|| missing("test or pairs"))?,
        },
    };
    let intersectional = matches!(text(&parts, "intersectional")?.as_deref(), Some("true" | "1" | "yes"));
    let sensitive = parse_sensitive(&text(&parts, "sensitive")?.ok_or_else(|| missing("sensitive"))?, intersectional)?;
    let mode = text(&parts, "mode")?
        .map(|m| m.parse::<IngestMode>())
        .transpose()?
        .unwrap_or_default();
    Ok(IngestInput {
        left,
        right,
        pairs,
        sensitive,
        mode,
        scores,
    })
}

async fn upload_dataset(
    State(st): State<AppState>,
    Path(id): Path<String>,
    mut multipart: Multipart,
) -> Result<Json<IngestSummary>> {
    st.session_dir(&id)?;
    let mut parts = HashMap::new();
    let mut scores = Vec::new();
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| Error::validation("invalid_multipart", e.to_string()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let file_name = field.file_name().map(str::to_string);
        let bytes = field
            .bytes()
            .await
            .map_err(|e| Error::validation("invalid_multipart", e.to_string()))?
            .to_vec();
        if name == "scores" || name.starts_with("scores:") {
            let matcher = score_name(&name, file_name.as_deref())?;
            scores.push((matcher, Source::new(file_name.unwrap_or(name), bytes)));
        } else if parts.insert(name.clone(), Part { file_name, bytes }).is_some() {
            return Err(Error::validation("duplicate_part", format!("part `{name}` given twice")));
        }
    }
    let input = ingest_input(parts, scores)?;
    st.with_session(&id, move |s| s.ingest(input)).await.map(Json)
}

async fn matchers(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<MatcherCatalog>> {
    let session = st.with_session(&id, |s| Ok(s.matchers().to_vec())).await?;
    Ok(Json(MatcherCatalog {
        builtin: catalog(),
        session,
    }))
}

async fn start_match(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<(StatusCode, Json<JobCreated>)> {
    let request: TrainRequest = typed(body_value(&body)?)?;
    parse_kinds(&request.matcher_ids)?;
    let state = st.with_session(&id, |s| Ok(s.state())).await?;
    if state < SessionState::Ingested {
        return Err(Error::OutOfOrder("match needs an ingested dataset".to_string()));
    }
    let job_id = uuid::Uuid::new_v4().simple().to_string();
    let job: SharedJob = Arc::new(Mutex::new(JobStatus {
        job_id: job_id.clone(),
        session_id: id.clone(),
        kind: JobKind::Train,
        state: JobState::Queued,
        progress: 0.0,
        error: None,
        result: None,
    }));
    lock(&st.0.jobs).insert(job_id.clone(), job.clone());
    let dir = st.session_dir(&id)?;
    let guard = st.session_lock(&id);
    tokio::task::spawn_blocking(move || {
        let _held = lock(&guard);
        lock(&job).state = JobState::Running;
        let progress = |f: f64| lock(&job).progress = f;
        let outcome = Session::open(&dir).and_then(|mut s| s.train(&request, &progress));
        let mut j = lock(&job);
        match outcome {
            Ok(summary) => {
                j.progress = 1.0;
                j.result = Some(summary);
                j.state = JobState::Done;
            }
            Err(e) => {
                j.error = Some(e.body());
                j.state = JobState::Failed;
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(JobCreated { job_id })))
}

async fn job(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<JobStatus>> {
    let job = lock(&st.0.jobs)
        .get(&id)
        .cloned()
        .ok_or_else(|| Error::NotFound(format!("job `{id}`")))?;
    let status = lock(&job).clone();
    Ok(Json(status))
}

async fn audit(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<AuditReport>> {
    let mut v = body_value(&body)?;
    st.audit_defaults(&mut v);
    let config: AuditConfig = typed(v)?;
    st.with_session(&id, move |s| s.audit(&config)).await.map(Json)
}

async fn multiworkload(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<MultiWorkloadReport>> {
    let mut v = body_value(&body)?;
    if let Value::Object(map) = &mut v {
        let audit = map.entry("audit").or_insert_with(|| json!({}));
        st.audit_defaults(audit);
    }
    let config: MultiWorkloadConfig = typed(v)?;
    st.with_session(&id, move |s| s.multiworkload(&config)).await.map(Json)
}

async fn explain(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<Explanation>> {
    let mut v = body_value(&body)?;
    if let Some(c) = v.get_mut("config") {
        st.audit_defaults(c);
    }
    let request: ExplainRequest = typed(v)?;
    st.with_session(&id, move |s| s.explain(&request)).await.map(Json)
}

async fn resolve(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<Resolution>> {
    let mut v = body_value(&body)?;
    st.fill(&mut v, &[("cap", json!(st.0.config.cap))]);
    let request: ResolveRequest = typed(v)?;
    st.with_session(&id, move |s| s.resolve(&request)).await.map(Json)
}

async fn strategy(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<AuditReport>> {
    let mut v = body_value(&body)?;
    if let Some(c) = v.get_mut("config") {
        st.audit_defaults(c);
    }
    let request: StrategyRequest = typed(v)?;
    st.with_session(&id, move |s| s.strategy(&request)).await.map(Json)
}

async fn demo(State(st): State<AppState>, body: Bytes) -> Result<Json<IngestSummary>> {
    let request: DemoRequest = typed(body_value(&body)?)?;
    let input = demo_input(&request)?;
    let mut session = tokio::task::spawn_blocking({
        let st = st.clone();
        move || st.new_session()
    })
    .await
    .map_err(|e| Error::Internal(e.to_string()))??;
    let id = session.id().to_string();
    let guard = st.session_lock(&id);
    tokio::task::spawn_blocking(move || {
        let _held = lock(&guard);
        session.ingest(input)
    })
    .await
    .map_err(|e| Error::Internal(e.to_string()))?
    .map(Json)
}

/// OpenAPI description of the service.
pub fn openapi() -> Value {
    let op = |summary: &str, body: Option<&str>, response: &str| {
        let mut o = json!({
            "summary": summary,
            "responses": {
                "200": { "description": response },
                "400": { "$ref": "#/components/responses/Error" },
                "404": { "$ref": "#/components/responses/Error" },
                "409": { "$ref": "#/components/responses/Error" },
            }
        });
        if let Some(b) = body {
            o["requestBody"] = json!({ "content": { b: { "schema": { "type": "object" } } } });
        }
        o
    };
    let id = json!([{ "name": "id", "in": "path", "required": true, "schema": { "type": "string" } }]);
    let j = Some("application/json");
    json!({
        "openapi": "3.0.3",
        "info": { "title": "matchaudit", "version": env!("CARGO_PKG_VERSION") },
        "paths": {
            "/spec": { "get": op("This document", None, "OpenAPI JSON") },
            "/sessions": { "post": op("Create a session", None, "{session_id}") },
            "/sessions/{id}": { "parameters": id, "get": op("Session state and config snapshots", None, "SessionMeta") },
            "/sessions/{id}/dataset": { "parameters": id, "post": op(
                "Upload tables, pairs (test/train/valid or pairs+ratios+split_seed), sensitive spec, intersectional, mode and scores files",
                Some("multipart/form-data"), "IngestSummary") },
            "/sessions/{id}/matchers": { "parameters": id, "get": op("Built-in matcher catalog and session matchers", None, "MatcherCatalog") },
            "/sessions/{id}/match": { "parameters": id, "post": op("Train matchers {matcher_ids, seed}", j, "202 {job_id}") },
            "/sessions/{id}/audit": { "parameters": id, "post": op("Audit with an AuditConfig", j, "AuditReport") },
            "/sessions/{id}/audit/multiworkload": { "parameters": id, "post": op("Bootstrap test {k, alpha, seed, audit}", j, "MultiWorkloadReport") },
            "/sessions/{id}/explain": { "parameters": id, "post": op("Explain one group under one matcher", j, "Explanation") },
            "/sessions/{id}/resolve": { "parameters": id, "post": op("Assignment space, points and Pareto frontier", j, "Resolution") },
            "/sessions/{id}/resolve/strategy": { "parameters": id, "post": op("Re-audit an assignment {assignment, config}", j, "AuditReport") },
            "/jobs/{id}": { "parameters": id, "get": op("Job status", None, "JobStatus") },
            "/demo/datasets": { "post": op("Generate and ingest a planted-bias dataset {profile, seed}", j, "IngestSummary") },
        },
        "components": {
            "responses": {
                "Error": {
                    "description": "Error with a machine-readable code",
                    "content": { "application/json": { "schema": {
                        "type": "object",
                        "properties": { "error": { "type": "object", "properties": {
                            "code": { "type": "string" }, "message": { "type": "string" } } } }
                    } } }
                }
            }
        }
    })
}
