//! HTTP API.
//!
//! | method | path                    | body / query                      |
//! |--------|-------------------------|-----------------------------------|
//! | POST   | `/issues`               | [`IngestRequest`], `Idempotency-Key` header |
//! | GET    | `/issues`               | `?status=open\|identified\|claimed` |
//! | GET    | `/issues/{id}`          |                                   |
//! | POST   | `/issues/{id}/identify` |                                   |
//! | POST   | `/issues/{id}/claim`    | [`ClaimRequest`]                  |
//! | GET    | `/export/labeled`       | labeled-record lines              |
//! | POST   | `/admin/model`          | [`ModelRequest`], bearer token    |
//! | GET    | `/health`               |                                   |
//!
//! Errors are returned as `{"error": kind, "message": text}`.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use culprit::domain::{records_header_line, record_line, ChangeCandidate, FailureEvent, IssueStatus, ScoredCandidate, TriageIssue};
use culprit::scorer::{rank, score_candidates};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use crate::model::{LoadedModel, ModelSlot};
use crate::store::{IngestOutcome, IssueStore, IssueSummary, DEFAULT_SNAPSHOT_EVERY};
use crate::{ServiceError, ServiceResult};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Mutex<IssueStore>>,
    pub model: Arc<ModelSlot>,
    pub admin_token: Option<String>,
}

impl AppState {
    pub fn new(store: IssueStore, model: Option<LoadedModel>, admin_token: Option<String>) -> Self {
        Self {
            store: Arc::new(Mutex::new(store)),
            model: Arc::new(ModelSlot::new(model)),
            admin_token,
        }
    }

    fn store(&self) -> MutexGuard<'_, IssueStore> {
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestRequest {
    #[serde(default)]
    pub event_id: Option<String>,
    pub error_text: String,
    #[serde(default)]
    pub test_name: Option<String>,
    #[serde(default)]
    pub observed_at: Option<DateTime<Utc>>,
    pub suspects: Vec<ChangeCandidate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClaimRequest {
    pub change_id: String,
    pub user_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRequest {
    pub path: PathBuf,
}

/// A full issue plus its derived primary suspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueView {
    #[serde(flatten)]
    pub issue: TriageIssue,
    pub primary_suspect: Option<String>,
}

impl From<&TriageIssue> for IssueView {
    fn from(issue: &TriageIssue) -> Self {
        Self {
            primary_suspect: issue.primary_suspect().map(str::to_string),
            issue: issue.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub issue_id: String,
    pub model: String,
    /// Highest raw score first.
    pub candidates: Vec<ScoredCandidate>,
}

#[derive(Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::NotASuspect { .. } | ServiceError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::ModelUnavailable => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
            ServiceError::Core(culprit::Error::Io(_)) => StatusCode::INTERNAL_SERVER_ERROR,
            ServiceError::Core(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::CorruptLog { .. } | ServiceError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = ErrorBody {
            error: self.kind(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

fn json_body<T>(payload: Result<Json<T>, JsonRejection>) -> ServiceResult<T> {
    payload.map(|Json(v)| v).map_err(|e| ServiceError::Invalid(e.body_text()))
}

async fn ingest(
    State(state): State<AppState>,
    headers: HeaderMap,
    payload: Result<Json<IngestRequest>, JsonRejection>,
) -> ServiceResult<Response> {
    let req = json_body(payload)?;
    let key = match headers.get(IDEMPOTENCY_HEADER) {
        Some(v) => Some(
            v.to_str()
                .map_err(|_| ServiceError::Invalid("Idempotency-Key is not visible ASCII".into()))?
                .to_string(),
        ),
        None => None,
    };
    let mut store = state.store();
    let event_id = req
        .event_id
        .or_else(|| key.clone())
        .unwrap_or_else(|| format!("evt-{:06}", store.seq() + 1));
    let mut failure = FailureEvent::new(event_id, &req.error_text)?;
    failure.test_name = req.test_name;
    if let Some(at) = req.observed_at {
        failure.observed_at = at;
    }
    let out: IngestOutcome = store.ingest(failure, req.suspects, key.as_deref())?;
    let status = if out.created {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    Ok((status, Json(out)).into_response())
}

#[derive(Deserialize)]
struct ListQuery {
    status: Option<String>,
}

async fn list(
    State(state): State<AppState>,
    query: Result<Query<ListQuery>, QueryRejection>,
) -> ServiceResult<Json<Vec<IssueSummary>>> {
    let Query(q) = query.map_err(|e| ServiceError::Invalid(e.body_text()))?;
    let status = q
        .status
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<IssueStatus>())
        .transpose()?;
    Ok(Json(state.store().list(status)))
}

async fn get_issue(State(state): State<AppState>, Path(id): Path<String>) -> ServiceResult<Json<IssueView>> {
    let store = state.store();
    let issue = store.get(&id).ok_or_else(|| ServiceError::NotFound(id.clone()))?;
    Ok(Json(IssueView::from(issue)))
}

async fn identify(State(state): State<AppState>, Path(id): Path<String>) -> ServiceResult<Json<Identification>> {
    let (failure, suspects) = {
        let store = state.store();
        let issue = store.get(&id).ok_or_else(|| ServiceError::NotFound(id.clone()))?;
        (issue.failure.clone(), issue.suspects.clone())
    };
    let model = state.model.current().ok_or(ServiceError::ModelUnavailable)?;
    let scorer_model = Arc::clone(&model);
    let scored = tokio::task::spawn_blocking(move || score_candidates(&scorer_model.scorer, &failure, &suspects))
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e)))??;
    let ranked = rank(scored);
    state.store().record_scores(&id, &model.identifier, ranked.clone())?;
    Ok(Json(Identification {
        issue_id: id,
        model: model.identifier.clone(),
        candidates: ranked,
    }))
}

async fn claim(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<ClaimRequest>, JsonRejection>,
) -> ServiceResult<Json<IssueView>> {
    let req = json_body(payload)?;
    let mut store = state.store();
    let issue = store.claim(&id, &req.change_id, &req.user_id)?;
    Ok(Json(IssueView::from(issue)))
}

async fn export_labeled(State(state): State<AppState>) -> Response {
    let records = state.store().export_labeled();
    let mut body = records_header_line();
    body.push('\n');
    for r in &records {
        body.push_str(&record_line(r));
        body.push('\n');
    }
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

#[derive(Serialize)]
struct ModelSwapped {
    model: String,
    previous: Option<String>,
}

async fn swap_model(
    State(state): State<AppState>,
    headers: HeaderMap,
    payload: Result<Json<ModelRequest>, JsonRejection>,
) -> ServiceResult<Response> {
    let expected = state.admin_token.as_deref().ok_or(ServiceError::Unauthorized)?;
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if given != Some(expected) {
        return Err(ServiceError::Unauthorized);
    }
    let req = json_body(payload)?;
    let loaded = tokio::task::spawn_blocking(move || LoadedModel::load(&req.path))
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e)))??;
    let model = loaded.identifier.clone();
    let previous = state.model.swap(loaded).map(|m| m.identifier.clone());
    Ok(Json(ModelSwapped { model, previous }).into_response())
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    model: Option<String>,
    issues: usize,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok",
        model: state.model.current().map(|m| m.identifier.clone()),
        issues: state.store().len(),
    })
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/issues", post(ingest).get(list))
        .route("/issues/{id}", get(get_issue))
        .route("/issues/{id}/identify", post(identify))
        .route("/issues/{id}/claim", post(claim))
        .route("/export/labeled", get(export_labeled))
        .route("/admin/model", post(swap_model))
        .route("/health", get(health))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    pub model_path: Option<PathBuf>,
    pub admin_token: Option<String>,
    pub snapshot_every: u64,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: data_dir.into(),
            model_path: None,
            admin_token: None,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
        }
    }
}

/// Opens the store, loads the model if configured, and serves until
/// interrupted.
pub async fn serve(config: ServiceConfig) -> ServiceResult<()> {
    let store = IssueStore::open_with(&config.data_dir, config.snapshot_every)?;
    let model = config.model_path.as_deref().map(LoadedModel::load).transpose()?;
    let state = AppState::new(store, model, config.admin_token.clone());
    let listener = tokio::net::TcpListener::bind(config.listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    eprintln!("listening on http://{}", listener.local_addr()?);
    let store = Arc::clone(&state.store);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    store.lock().unwrap_or_else(|p| p.into_inner()).snapshot()?;
    Ok(())
}
