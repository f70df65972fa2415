//! Local HTTP + JSON editing service.
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | GET | `/healthz` | | `{"status":"ok","checkpoint":..,"sessions":n}` |
//! | POST | `/sessions` | `{"image_png": b64, "mask_png"?: b64}` | `{"id","revision","width","height","strokes"}` |
//! | GET | `/sessions/{id}` | | `{"id","revision","mask_png","strokes": StrokeSet}` |
//! | POST | `/sessions/{id}/edits` | an [`Edit`] | `{"revision","strokes"}` |
//! | GET | `/sessions/{id}/preview` | | `{"revision","image_png","timings","cached","checkpoint"}` |
//!
//! Errors come back as `{"error": message}` with 400 (bad payload), 404
//! (unknown session) or 409 (no checkpoint / model not trained).

mod session;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use session::{Edit, Preview, ServeError, Session, SessionState, SessionStore, DEFAULT_UNDO_DEPTH};

use crate::error::Error;
use crate::imagecore::{decode_mask_png, decode_png, encode_mask_png, encode_png};
use crate::pipeline::StageTimings;
use crate::strokes::StrokeSet;

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateRequest {
    pub image_png: String,
    #[serde(default)]
    pub mask_png: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateResponse {
    pub id: String,
    pub revision: u64,
    pub width: usize,
    pub height: usize,
    pub strokes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EditResponse {
    pub revision: u64,
    pub strokes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionExport {
    pub id: String,
    pub revision: u64,
    pub mask_png: String,
    pub strokes: StrokeSet,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PreviewResponse {
    pub revision: u64,
    pub image_png: String,
    pub timings: StageTimings,
    pub cached: bool,
    pub checkpoint: String,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<ServeError> for ApiError {
    fn from(e: ServeError) -> Self {
        let status = match &e {
            ServeError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServeError::Core(Error::Untrained(_)) => StatusCode::CONFLICT,
            ServeError::Core(Error::Io { .. }) => StatusCode::INTERNAL_SERVER_ERROR,
            ServeError::Core(_) => StatusCode::BAD_REQUEST,
        };
        ApiError(status, e.to_string())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ServeError::Core(e).into()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

fn b64_decode(text: &str, what: &str) -> std::result::Result<Vec<u8>, ApiError> {
    B64.decode(text.trim()).map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("{what}: bad base64: {e}")))
}

/// Runs CPU-heavy work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> std::result::Result<T, ApiError> + Send + 'static) -> std::result::Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn healthz(State(store): State<Arc<SessionStore>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "checkpoint": store.checkpoint_digest(),
        "sessions": store.len(),
    }))
}

async fn create(State(store): State<Arc<SessionStore>>, Json(req): Json<CreateRequest>) -> ApiResult<CreateResponse> {
    let image = decode_png(&b64_decode(&req.image_png, "image_png")?)?;
    let mask = match &req.mask_png {
        Some(m) => Some(decode_mask_png(&b64_decode(m, "mask_png")?)?),
        None => None,
    };
    blocking(move || {
        let (id, revision) = store.create(&image, mask)?;
        let (_, state) = store.snapshot(&id)?;
        Ok(Json(CreateResponse {
            id,
            revision,
            width: state.image.width(),
            height: state.image.height(),
            strokes: state.strokes.len(),
        }))
    })
    .await
}

async fn export(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<SessionExport> {
    let (revision, state) = store.snapshot(&id)?;
    Ok(Json(SessionExport {
        id,
        revision,
        mask_png: B64.encode(encode_mask_png(&state.mask)?),
        strokes: state.strokes,
    }))
}

async fn edit(State(store): State<Arc<SessionStore>>, Path(id): Path<String>, Json(edit): Json<Edit>) -> ApiResult<EditResponse> {
    blocking(move || {
        let revision = store.edit(&id, &edit)?;
        let (_, state) = store.snapshot(&id)?;
        Ok(Json(EditResponse {
            revision,
            strokes: state.strokes.len(),
        }))
    })
    .await
}

async fn preview(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<PreviewResponse> {
    blocking(move || {
        let (p, cached) = store.preview(&id)?;
        Ok(Json(PreviewResponse {
            revision: p.revision,
            image_png: B64.encode(encode_png(&p.image)?),
            timings: p.timings,
            cached,
            checkpoint: p.checkpoint.clone(),
        }))
    })
    .await
}

pub fn router(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(export))
        .route("/sessions/{id}/edits", post(edit))
        .route("/sessions/{id}/preview", get(preview))
        .with_state(store)
}

/// Serves until the process is stopped. Binding port 0 picks a free port;
/// `ready` receives the bound address.
pub async fn serve(store: Arc<SessionStore>, addr: SocketAddr, ready: impl FnOnce(SocketAddr)) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(addr.to_string(), e))?;
    let local = listener.local_addr().map_err(|e| Error::io(addr.to_string(), e))?;
    ready(local);
    axum::serve(listener, router(store))
        .await
        .map_err(|e| Error::io(local.to_string(), e))
}
