//! Scoring API for the rater web app. Wire format: `docs/http-api.md`.
//!
//! Rater routes never expose model identity: they only return
//! [`WorkItemView`](embryocap::sessions::WorkItemView)s, progress counters and
//! acknowledgements. Unblinded data is only reachable on admin routes.

use std::collections::HashMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use embryocap::preprocess::prepared_png_path;
use embryocap::sessions::{ItemStatus, SessionError, SessionStore, SubmitAck};
use embryocap::ComponentScores;
use serde_json::json;
use tokio::sync::RwLock;

use crate::config::{Layout, PipelineConfig};
use crate::CliError;

#[derive(Clone)]
pub struct AppState {
    store: Arc<RwLock<SessionStore>>,
    /// Bearer token → rater id.
    raters: Arc<HashMap<String, String>>,
    admin_token: Option<Arc<str>>,
    prepared_dir: PathBuf,
    static_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(
        store: SessionStore,
        raters: HashMap<String, String>,
        admin_token: Option<String>,
        prepared_dir: PathBuf,
    ) -> Self {
        Self {
            store: Arc::new(RwLock::new(store)),
            raters: Arc::new(raters),
            admin_token: admin_token.map(Into::into),
            prepared_dir,
            static_dir: None,
        }
    }

    /// Resolves rater and admin tokens from the environment variables the
    /// config names.
    pub fn from_config(cfg: &PipelineConfig, layout: &Layout) -> Result<Self, CliError> {
        let mut raters = HashMap::new();
        for r in &cfg.session.raters {
            let token = std::env::var(&r.token_env).map_err(|_| {
                CliError::Validation(format!(
                    "session.raters `{}`: environment variable `{}` is not set",
                    r.id, r.token_env
                ))
            })?;
            if token.is_empty() || raters.insert(token, r.id.clone()).is_some() {
                return Err(CliError::Validation(format!(
                    "session.raters `{}`: token must be nonempty and unique",
                    r.id
                )));
            }
        }
        let admin = std::env::var(&cfg.session.admin_token_env)
            .ok()
            .filter(|t| !t.is_empty());
        if admin.is_none() {
            tracing::warn!(var = %cfg.session.admin_token_env, "admin token not set; admin routes disabled");
        }
        let store = SessionStore::open(&layout.sessions())?;
        let mut state = Self::new(store, raters, admin, layout.prepared());
        state.static_dir = cfg.session.static_dir.clone();
        Ok(state)
    }
}

pub fn router(state: AppState) -> Router {
    let static_dir = state.static_dir.clone();
    let api = Router::new()
        .route("/api/health", get(|| async { "ok" }))
        .route("/api/sessions/{sid}/next", get(next_item))
        .route("/api/sessions/{sid}/progress", get(progress))
        .route("/api/sessions/{sid}/items/{item}/image", get(item_image))
        .route("/api/sessions/{sid}/items/{item}/score", post(submit_score))
        .route("/api/admin/sessions/{sid}/status", get(admin_status))
        .route("/api/admin/sessions/{sid}/reconcile", post(admin_reconcile))
        .route("/api/admin/sessions/{sid}/export", get(admin_export))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.kind, "message": self.message}))).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, kind) = match &e {
            SessionError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            SessionError::UnknownItem(_) => (StatusCode::NOT_FOUND, "unknown_item"),
            SessionError::NotAssigned { .. } => (StatusCode::FORBIDDEN, "not_assigned"),
            SessionError::DuplicateSubmission(_) => (StatusCode::CONFLICT, "duplicate_submission"),
            SessionError::NotSubmitted(_) => (StatusCode::CONFLICT, "not_submitted"),
            SessionError::PhaseLocked => (StatusCode::LOCKED, "phase_locked"),
            SessionError::CalibrationIncomplete { .. } => (StatusCode::CONFLICT, "calibration_incomplete"),
            SessionError::Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_scores"),
            SessionError::MissingCaption { .. } | SessionError::InvalidPlan(_) | SessionError::SessionExists(_) => {
                (StatusCode::BAD_REQUEST, "invalid_plan")
            }
            SessionError::Store(_) => (StatusCode::INTERNAL_SERVER_ERROR, "store"),
        };
        ApiError::new(status, kind, e.to_string())
    }
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
}

fn unauthorized() -> ApiError {
    ApiError::new(
        StatusCode::UNAUTHORIZED,
        "unauthorized",
        "missing or unknown bearer token",
    )
}

fn rater(state: &AppState, headers: &HeaderMap) -> Result<String, ApiError> {
    bearer(headers)
        .and_then(|t| state.raters.get(t))
        .cloned()
        .ok_or_else(unauthorized)
}

fn admin(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    match (&state.admin_token, bearer(headers)) {
        (Some(want), Some(got)) if want.as_ref() == got => Ok(()),
        _ => Err(unauthorized()),
    }
}

fn image_url(sid: &str, item: &str) -> String {
    format!("/api/sessions/{sid}/items/{item}/image")
}

async fn next_item(
    State(state): State<AppState>,
    Path(sid): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let rater = rater(&state, &headers)?;
    let store = state.store.read().await;
    let session = store.get(&sid)?;
    if !session.plan.rater_ids.contains(&rater) {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "not_assigned",
            "rater is not part of this session",
        ));
    }
    Ok(Json(session.next_item(&rater, |i| image_url(&sid, &i.item_id))).into_response())
}

async fn progress(
    State(state): State<AppState>,
    Path(sid): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let rater = rater(&state, &headers)?;
    let store = state.store.read().await;
    Ok(Json(store.get(&sid)?.progress(&rater)).into_response())
}

async fn item_image(
    State(state): State<AppState>,
    Path((sid, item_id)): Path<(String, String)>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let rater = rater(&state, &headers)?;
    let frame_id = {
        let store = state.store.read().await;
        let item = store
            .get(&sid)?
            .item(&item_id)
            .ok_or_else(|| SessionError::UnknownItem(item_id.clone()))?;
        if item.rater_id != rater {
            return Err(SessionError::NotAssigned { item: item_id, rater }.into());
        }
        item.frame_id.clone()
    };
    let bytes = tokio::fs::read(prepared_png_path(&state.prepared_dir, &frame_id))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "image", e.to_string()))?;
    Ok((
        [(header::CONTENT_TYPE, "image/png"), (header::CACHE_CONTROL, "no-store")],
        bytes,
    )
        .into_response())
}

async fn submit_score(
    State(state): State<AppState>,
    Path((sid, item_id)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let rater = rater(&state, &headers)?;
    // Extra fields (e.g. a client-computed composite) are ignored.
    let scores: ComponentScores = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_scores", e.to_string()))?;
    let mut store = state.store.write().await;
    store.submit(&sid, &item_id, &rater, scores)?;
    let ack = SubmitAck {
        item_id,
        status: ItemStatus::Submitted,
        progress: store.get(&sid)?.progress(&rater),
    };
    Ok((StatusCode::CREATED, Json(ack)).into_response())
}

async fn admin_status(
    State(state): State<AppState>,
    Path(sid): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    admin(&state, &headers)?;
    let store = state.store.read().await;
    let session = store.get(&sid)?;
    let raters: serde_json::Map<String, serde_json::Value> = session
        .plan
        .rater_ids
        .iter()
        .map(|r| {
            (
                r.clone(),
                serde_json::to_value(session.progress(r)).expect("progress serializes"),
            )
        })
        .collect();
    Ok(Json(json!({
        "session_id": sid,
        "counts": session.counts(),
        "calibration_reconciled": session.calibration_reconciled,
        "raters": raters,
    }))
    .into_response())
}

async fn admin_reconcile(
    State(state): State<AppState>,
    Path(sid): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    admin(&state, &headers)?;
    state.store.write().await.reconcile_calibration(&sid)?;
    Ok(Json(json!({"session_id": sid, "calibration_reconciled": true})).into_response())
}

async fn admin_export(
    State(state): State<AppState>,
    Path(sid): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    admin(&state, &headers)?;
    let records = state.store.write().await.export(&sid, "admin api")?;
    Ok(Json(json!({"session_id": sid, "records": records})).into_response())
}
