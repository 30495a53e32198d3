//! HTTP API over a single loaded session.
//!
//! | route                      | response                                   |
//! |----------------------------|--------------------------------------------|
//! | `GET /health`              | `{"scene_loaded": bool}`                   |
//! | `GET /views`               | camera list                                |
//! | `POST /query`              | `{text, k?, rule?}` to a query result      |
//! | `GET /render/{view}?ids=`  | PNG overlay                                |
//! | `GET /extract?ids=`        | GSG zip download                           |
//!
//! JSON responses are wrapped as `{"status": "ok", "data": ...}` or
//! `{"status": "error", "error": {"code": ..., "message": ...}}`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bagsplat::gsg::scene_zip_bytes;
use bagsplat::{ObjectId, SelectionRule};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::session::{encode_png, parse_ids, Session, HIGHLIGHT, HIGHLIGHT_BLEND};

/// Environment variable holding the bind address.
pub const ADDR_ENV: &str = "BAGSPLAT_ADDR";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

#[derive(Clone, Default)]
pub struct AppState {
    pub session: Option<Arc<Session>>,
}

impl AppState {
    pub fn with_session(session: Session) -> Self {
        Self {
            session: Some(Arc::new(session)),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "status": "error",
            "error": {"code": self.status.as_u16(), "message": self.message},
        });
        (self.status, Json(body)).into_response()
    }
}

impl From<bagsplat::Error> for ApiError {
    fn from(e: bagsplat::Error) -> Self {
        use bagsplat::Error as E;
        let status = match e {
            E::InvalidArgument(_) | E::UnknownIds { .. } | E::Embed { .. } | E::Dimension(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

fn ok<T: Serialize>(data: T) -> Response {
    Json(json!({"status": "ok", "data": data})).into_response()
}

fn session(state: &AppState) -> Result<Arc<Session>, ApiError> {
    state
        .session
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "no scene loaded"))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/views", get(views))
        .route("/query", post(query))
        .route("/render/{view_id}", get(render_view))
        .route("/extract", get(extract))
        .with_state(state)
}

async fn health(State(state): State<AppState>) -> Response {
    ok(json!({"scene_loaded": state.session.is_some()}))
}

async fn views(State(state): State<AppState>) -> Result<Response, ApiError> {
    let s = session(&state)?;
    Ok(ok(s.scene.cameras()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub text: String,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub rule: Option<String>,
}

async fn query(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let s = session(&state)?;
    let req: QueryRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid query body: {e}")))?;
    if req.text.trim().is_empty() {
        return Err(ApiError::bad_request("query text is empty"));
    }
    let rule = req
        .rule
        .as_deref()
        .map(str::parse::<SelectionRule>)
        .transpose()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let result = tokio::task::spawn_blocking(move || s.query(&req.text, req.k, rule))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(ok(result))
}

fn ids_param(params: &BTreeMap<String, String>, s: &Session) -> Result<BTreeSet<ObjectId>, ApiError> {
    if let Some(unknown) = params.keys().find(|k| k.as_str() != "ids") {
        return Err(ApiError::bad_request(format!("unknown parameter {unknown:?}")));
    }
    let ids = match params.get("ids") {
        Some(v) => parse_ids(v).map_err(|e| ApiError::bad_request(e.to_string()))?,
        None => BTreeSet::new(),
    };
    s.check_ids(&ids)?;
    Ok(ids)
}

async fn render_view(
    State(state): State<AppState>,
    Path(view_id): Path<String>,
    Query(params): Query<BTreeMap<String, String>>,
) -> Result<Response, ApiError> {
    let s = session(&state)?;
    let ids = ids_param(&params, &s)?;
    if s.scene.camera(&view_id).is_none() {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            format!("unknown view {view_id:?}"),
        ));
    }
    let png = tokio::task::spawn_blocking(move || -> Result<Vec<u8>, ApiError> {
        let view = s.rendered(&view_id).expect("view checked above")?;
        let img = view.overlay(&ids, HIGHLIGHT, HIGHLIGHT_BLEND);
        encode_png(&img).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn extract(
    State(state): State<AppState>,
    Query(params): Query<BTreeMap<String, String>>,
) -> Result<Response, ApiError> {
    let s = session(&state)?;
    let ids = ids_param(&params, &s)?;
    let sub = s.scene.filter_by_object_ids(&ids)?;
    let bytes = scene_zip_bytes(&sub)?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/zip"),
            (header::CONTENT_DISPOSITION, "attachment; filename=\"extract.gsg.zip\""),
        ],
        bytes,
    )
        .into_response())
}

/// Serves `state` on `addr` until the process is stopped.
pub async fn serve(state: AppState, addr: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
