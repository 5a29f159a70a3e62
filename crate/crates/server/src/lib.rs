//! HTTP service over the scene editing pipeline.
//!
//! | method | path                                   | body / query                         |
//! |--------|----------------------------------------|--------------------------------------|
//! | GET    | `/healthz`                             |                                      |
//! | POST   | `/sessions`                            | `{bundle?, backend?, seed?}`         |
//! | POST   | `/sessions/{id}/command`               | `{text}`                             |
//! | GET    | `/sessions/{id}/render`                | `kind=topdown\|camera&frame=k&camera=i` |
//! | GET    | `/sessions/{id}/log`                   |                                      |
//! | GET    | `/sessions/{id}/scene`                 |                                      |
//!
//! Errors are JSON `{error, message}` with a stable `error` kind. Commands
//! are serialized per session: a second command while one is running gets
//! 409. Renders work on the scene snapshot current when they start.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use drivesim_core::bundle::{Bundle, BundleError};
use drivesim_core::compositor::{render_camera_view, CompositorError};
use drivesim_core::io::encode_png;
use drivesim_core::motion::FRAME_RATE;
use drivesim_core::orchestrator::backend::backend_from_name;
use drivesim_core::orchestrator::{execute_round, BackendError, LanguageBackend, RenderJob};
use drivesim_core::raster::render_topdown;
use drivesim_core::scene::{EditEntry, SceneGraph};
use drivesim_core::Exec;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;
use tower_http::cors::CorsLayer;

/// Builds a language backend from the name given at session creation.
pub type BackendFactory = Arc<dyn Fn(&str) -> Result<Arc<dyn LanguageBackend>, BackendError> + Send + Sync>;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("no session {0}")]
    UnknownSession(String),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Backend(BackendError),
    #[error("a command is already running in session {0}")]
    Busy(String),
    #[error("{kind}: {message}")]
    Execution { kind: &'static str, message: String, scene_digest: String },
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Render(#[from] CompositorError),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ApiError::Bundle(BundleError::Write { .. }) | ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ApiError::Bundle(_) | ApiError::Backend(_) | ApiError::BadRequest(_) | ApiError::Render(_) => StatusCode::BAD_REQUEST,
            ApiError::Busy(_) => StatusCode::CONFLICT,
            ApiError::Execution { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            ApiError::UnknownSession(_) => "not_found",
            ApiError::Bundle(BundleError::Missing(_)) => "missing_file",
            ApiError::Bundle(_) => "invalid_bundle",
            ApiError::Backend(_) => "backend_config",
            ApiError::Busy(_) => "busy",
            ApiError::Execution { kind, .. } => kind,
            ApiError::BadRequest(_) | ApiError::Render(_) => "bad_request",
            ApiError::Internal(_) => "internal",
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.kind(), "message": self.to_string() });
        match &self {
            ApiError::Execution { scene_digest, .. } => body["scene_digest"] = json!(scene_digest),
            ApiError::Bundle(BundleError::Missing(file)) => body["file"] = json!(file),
            _ => {}
        }
        (self.status(), Json(body)).into_response()
    }
}

pub struct Session {
    pub id: String,
    bundle: Arc<Bundle>,
    backend: Arc<dyn LanguageBackend>,
    scene: RwLock<Arc<SceneGraph>>,
    command: tokio::sync::Mutex<()>,
}

impl Session {
    pub fn snapshot(&self) -> Arc<SceneGraph> {
        self.scene.read().expect("scene lock").clone()
    }
}

#[derive(Clone)]
pub struct AppState {
    sessions: Arc<Mutex<BTreeMap<String, Arc<Session>>>>,
    next_id: Arc<AtomicU64>,
    backends: BackendFactory,
    exec: Exec,
}

impl Default for AppState {
    fn default() -> Self {
        AppState::new(Arc::new(|name: &str| backend_from_name(name).map(Arc::from)))
    }
}

impl AppState {
    pub fn new(backends: BackendFactory) -> Self {
        AppState { sessions: Arc::default(), next_id: Arc::new(AtomicU64::new(1)), backends, exec: Exec::default() }
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions.lock().expect("session table").get(id).cloned().ok_or_else(|| ApiError::UnknownSession(id.into()))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/command", post(command))
        .route("/sessions/{id}/render", get(render))
        .route("/sessions/{id}/log", get(log))
        .route("/sessions/{id}/scene", get(scene))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Bundle directory; the built-in demo content when absent.
    pub bundle: Option<PathBuf>,
    #[serde(default = "default_backend")]
    pub backend: String,
    #[serde(default)]
    pub seed: u64,
}

fn default_backend() -> String {
    "rule".into()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub id: String,
    pub backend: String,
    pub scene_digest: String,
}

async fn create_session(State(state): State<AppState>, Json(req): Json<CreateSession>) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let backend = (state.backends)(&req.backend).map_err(ApiError::Backend)?;
    let bundle = match req.bundle {
        None => Bundle::demo(),
        Some(dir) => blocking(move || Bundle::load(&dir).map_err(ApiError::from)).await?,
    };
    let scene = bundle.scene(req.seed);
    let id = format!("session-{}", state.next_id.fetch_add(1, Ordering::SeqCst));
    let created = SessionCreated { id: id.clone(), backend: req.backend, scene_digest: scene.digest() };
    let session = Session { id: id.clone(), bundle: Arc::new(bundle), backend, scene: RwLock::new(Arc::new(scene)), command: Default::default() };
    state.sessions.lock().expect("session table").insert(id, Arc::new(session));
    Ok((StatusCode::CREATED, Json(created)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandRequest {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InstructionView {
    pub agent: String,
    pub text: String,
    pub config: Map<String, Value>,
}

impl From<&EditEntry> for InstructionView {
    fn from(e: &EditEntry) -> Self {
        let agent = serde_json::to_value(e.instruction.agent).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        InstructionView { agent, text: e.instruction.text.clone(), config: e.config.entries.clone() }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RenderLinks {
    pub topdown: String,
    pub camera: String,
    /// Frames available to `render`, `0..frames`.
    pub frames: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CommandResponse {
    pub round: u64,
    pub instructions: Vec<InstructionView>,
    pub scene_digest: String,
    pub render_jobs: Vec<RenderJob>,
    pub renders: RenderLinks,
}

async fn command(State(state): State<AppState>, Path(id): Path<String>, Json(req): Json<CommandRequest>) -> Result<Json<CommandResponse>, ApiError> {
    let session = state.session(&id)?;
    let _guard = session.command.try_lock().map_err(|_| ApiError::Busy(id.clone()))?;
    let before = session.snapshot();
    let backend = session.backend.clone();
    let outcome = blocking(move || Ok(execute_round(&req.text, &before, backend.as_ref()).map_err(|e| (e.kind(), e.to_string())))).await?;
    let result = outcome.map_err(|(kind, message)| ApiError::Execution { kind, message, scene_digest: session.snapshot().digest() })?;
    let frames = result.scene.horizon();
    let response = CommandResponse {
        round: result.round,
        instructions: result.executed.iter().map(InstructionView::from).collect(),
        scene_digest: result.scene.digest(),
        render_jobs: result.render_jobs,
        renders: RenderLinks {
            topdown: format!("/sessions/{id}/render?kind=topdown&frame=0"),
            camera: format!("/sessions/{id}/render?kind=camera&frame=0"),
            frames,
        },
    };
    *session.scene.write().expect("scene lock") = Arc::new(result.scene);
    Ok(Json(response))
}

#[derive(Debug, Deserialize)]
pub struct RenderQuery {
    pub kind: String,
    #[serde(default)]
    pub frame: usize,
    #[serde(default)]
    pub camera: usize,
}

async fn render(State(state): State<AppState>, Path(id): Path<String>, Query(q): Query<RenderQuery>) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let scene = session.snapshot();
    let horizon = scene.horizon();
    if q.frame >= horizon {
        return Err(ApiError::BadRequest(format!("frame {} is outside 0..{horizon}", q.frame)));
    }
    let exec = state.exec;
    let png = match q.kind.as_str() {
        "topdown" => blocking(move || {
            let img = render_topdown(&scene, q.frame);
            encode_png(img.width, img.height, &img.pixels).map_err(|e| ApiError::Internal(e.to_string()))
        })
        .await?,
        "camera" => {
            let bundle = session.bundle.clone();
            blocking(move || {
                let camera = scene.rig.get(q.camera).ok_or(CompositorError::UnknownCamera(q.camera))?;
                let (w, h) = (camera.width, camera.height);
                let px = render_camera_view(&scene, &bundle.grid, &bundle.rig.exposure, q.camera, q.frame, FRAME_RATE, exec)?;
                encode_png(w, h, &px).map_err(|e| ApiError::Internal(e.to_string()))
            })
            .await?
        }
        other => return Err(ApiError::BadRequest(format!("unknown render kind {other:?} (expected topdown or camera)"))),
    };
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn log(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<EditEntry>>, ApiError> {
    Ok(Json(state.session(&id)?.snapshot().edit_log().to_vec()))
}

async fn scene(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let body = state.session(&id)?.snapshot().to_canonical_json();
    Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(e.to_string()))?
}
