//! HTTP routes over the session store.

use std::io::Cursor;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::json;

use scribblematte::image::encode_rgb_png;
use scribblematte::infoselect::Rect;
use scribblematte::labelstate::ScribbleStroke;
use scribblematte::session::{RoundRecord, Session, SessionConfig};
use scribblematte::{Error, Image};

use crate::store::{Replay, SessionStore};

pub const DEFAULT_MAX_DIM: usize = 4096;
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Clone, Debug)]
pub struct ApiConfig {
    /// Largest accepted width or height.
    pub max_dim: usize,
    pub ttl: Duration,
    /// Defaults applied under any per-session config.
    pub defaults: SessionConfig,
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self {
            max_dim: DEFAULT_MAX_DIM,
            ttl: crate::store::DEFAULT_TTL,
            defaults: SessionConfig::default(),
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<SessionStore>,
    pub cfg: Arc<ApiConfig>,
}

impl AppState {
    pub fn new(cfg: ApiConfig) -> Self {
        Self {
            store: Arc::new(SessionStore::new(cfg.ttl)),
            cfg: Arc::new(cfg),
        }
    }
}

pub fn router(state: AppState) -> Router {
    // multipart bodies for a max-size RGBA PNG can be large
    let body_limit = (state.cfg.max_dim * state.cfg.max_dim * 4 + (1 << 20)).min(1 << 30);
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/scribbles", post(submit_scribbles))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/sessions/{id}/trimap.png", get(trimap_png))
        .route("/sessions/{id}/alpha.png", get(alpha_png))
        .route("/sessions/{id}/overlay.png", get(overlay_png))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Links {
    #[serde(rename = "self")]
    pub this: String,
    pub overlay: String,
    pub trimap: Option<String>,
    pub alpha: Option<String>,
}

/// Wire view of a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionResource {
    pub id: String,
    pub status: String,
    /// Completed scribble rounds.
    pub iteration: usize,
    pub iterations: usize,
    pub width: usize,
    pub height: usize,
    pub superpixels: usize,
    pub suggested_region: Option<Rect>,
    pub suggested_regions: Vec<Rect>,
    pub ready_to_finalize: bool,
    pub coverage: f64,
    pub last_round: Option<RoundRecord>,
    pub links: Links,
}

impl SessionResource {
    pub fn of(id: &str, s: &Session) -> Self {
        let base = format!("/sessions/{id}");
        let finalized = s.result().is_some();
        let rects = s.suggested_rects();
        let (width, height) = s.image().dims();
        Self {
            id: id.to_string(),
            status: s.phase().name().to_string(),
            iteration: s.iteration(),
            iterations: s.config().iterations,
            width,
            height,
            superpixels: s.superpixels().len(),
            suggested_region: rects.first().copied(),
            suggested_regions: rects,
            ready_to_finalize: s.ready_to_finalize(),
            coverage: s.coverage(),
            last_round: s.history().last().cloned(),
            links: Links {
                this: base.clone(),
                overlay: format!("{base}/overlay.png"),
                trimap: finalized.then(|| format!("{base}/trimap.png")),
                alpha: finalized.then(|| format!("{base}/alpha.png")),
            },
        }
    }
}

/// An error response: `{"error": kind, "message": text, ...detail}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
    pub superpixel: Option<usize>,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
            superpixel: None,
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not-found", format!("no session {id}"))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (status, kind) = match &e {
            Error::WrongPhase { .. } => (StatusCode::CONFLICT, "wrong-phase"),
            Error::NoRegionsLeft => (StatusCode::CONFLICT, "no-regions-left"),
            Error::ScribbleConflict { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "conflicting-strokes"),
            Error::StrokeOutOfBounds { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "malformed-strokes"),
            Error::InvalidArgument(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid-argument"),
            Error::NoKnownPixels => (StatusCode::UNPROCESSABLE_ENTITY, "no-known-pixels"),
            Error::Decode(_) | Error::EmptyImage => (StatusCode::UNPROCESSABLE_ENTITY, "bad-image"),
            Error::ExternalSolver(_) => (StatusCode::BAD_GATEWAY, "external-solver"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let superpixel = match e {
            Error::ScribbleConflict { superpixel, .. } => Some(superpixel),
            _ => None,
        };
        Self {
            status,
            kind,
            message,
            superpixel,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.kind, "message": self.message });
        if let Some(sp) = self.superpixel {
            body["superpixel"] = json!(sp);
        }
        (self.status, axum::Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn json_response(status: StatusCode, value: &impl Serialize) -> Response {
    (status, axum::Json(value)).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))
}

fn lock(s: &Mutex<Session>) -> std::sync::MutexGuard<'_, Session> {
    s.lock().unwrap_or_else(|e| e.into_inner())
}

/// Runs `op`, or replays the response stored for the request's idempotency
/// key. Only non-5xx responses are stored.
async fn idempotent<F, Fut>(state: &AppState, headers: &HeaderMap, scope: String, op: F) -> Response
where
    F: FnOnce() -> Fut,
    Fut: std::future::Future<Output = Response>,
{
    let key = headers
        .get(IDEMPOTENCY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(|k| format!("{scope} {k}"));
    let key_lock = key.as_ref().map(|k| state.store.key_lock(k));
    let _held = match &key_lock {
        Some(m) => Some(m.lock().await),
        None => None,
    };
    if let Some(r) = key.as_ref().and_then(|k| state.store.replay(k)) {
        let status = StatusCode::from_u16(r.status).unwrap_or(StatusCode::OK);
        return (status, [(header::CONTENT_TYPE, r.content_type)], r.body).into_response();
    }
    let resp = op().await;
    let Some(key) = key else { return resp };
    if resp.status().is_server_error() {
        return resp;
    }
    let (parts, body) = resp.into_parts();
    let bytes = match axum::body::to_bytes(body, usize::MAX).await {
        Ok(b) => b,
        Err(e) => return ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()).into_response(),
    };
    let content_type = match parts.headers.get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()) {
        Some("application/json") | None => "application/json",
        Some(_) => "application/octet-stream",
    };
    state.store.remember(
        key,
        Replay {
            status: parts.status.as_u16(),
            content_type,
            body: bytes.to_vec(),
        },
    );
    Response::from_parts(parts, axum::body::Body::from(bytes))
}

/// Parses a session config from JSON, falling back to TOML, layered over
/// `base`.
pub fn parse_config(text: &str, base: &SessionConfig) -> Result<SessionConfig, String> {
    let mut value = serde_json::to_value(base).map_err(|e| e.to_string())?;
    let overlay: serde_json::Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(json_err) => {
            let t: toml::Value = toml::from_str(text).map_err(|e| format!("config is neither JSON ({json_err}) nor TOML ({e})"))?;
            serde_json::to_value(t).map_err(|e| e.to_string())?
        }
    };
    merge(&mut value, overlay);
    let cfg: SessionConfig = serde_json::from_value(value).map_err(|e| e.to_string())?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn merge(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn image_dims(bytes: &[u8]) -> ApiResult<(usize, usize)> {
    let reader = image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "bad-image", e.to_string()))?;
    let (w, h) = reader
        .into_dimensions()
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "bad-image", e.to_string()))?;
    Ok((w as usize, h as usize))
}

async fn read_upload(state: &AppState, mut mp: Multipart) -> ApiResult<(Vec<u8>, SessionConfig)> {
    let bad = |m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "bad-request", m);
    let (mut image, mut cfg) = (None, state.cfg.defaults.clone());
    while let Some(field) = mp.next_field().await.map_err(|e| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "too-large", e.body_text())
        } else {
            bad(e.body_text())
        }
    })? {
        let name = field.name().unwrap_or_default().to_string();
        let data = field.bytes().await.map_err(|e| bad(e.body_text()))?;
        match name.as_str() {
            "image" => image = Some(data.to_vec()),
            "config" => {
                let text = std::str::from_utf8(&data).map_err(|e| bad(e.to_string()))?;
                cfg = parse_config(text, &state.cfg.defaults)
                    .map_err(|m| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid-config", m))?;
            }
            other => return Err(bad(format!("unexpected field {other:?}"))),
        }
    }
    let image = image.ok_or_else(|| bad("missing image field".into()))?;
    Ok((image, cfg))
}

async fn create_session(State(state): State<AppState>, headers: HeaderMap, mp: Multipart) -> Response {
    let st = state.clone();
    idempotent(&state, &headers, "POST /sessions".into(), || async move {
        match create_inner(st, mp).await {
            Ok(r) => r,
            Err(e) => e.into_response(),
        }
    })
    .await
}

async fn create_inner(state: AppState, mp: Multipart) -> ApiResult<Response> {
    let (bytes, cfg) = read_upload(&state, mp).await?;
    let (w, h) = image_dims(&bytes)?;
    let cap = state.cfg.max_dim;
    if w > cap || h > cap {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "too-large",
            format!("{w}x{h} exceeds the {cap}x{cap} limit"),
        ));
    }
    let session = blocking(move || -> scribblematte::Result<Session> {
        let img = Image::decode(&bytes)?;
        Session::create(img, cfg)
    })
    .await??;
    let id = state.store.insert(session);
    let s = session_of(&state, &id)?;
    let body = SessionResource::of(&id, &lock(&s));
    Ok(json_response(StatusCode::CREATED, &body))
}

fn session_of(state: &AppState, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
    state.store.get(id).ok_or_else(|| ApiError::not_found(id))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = session_of(&state, &id)?;
    let body = SessionResource::of(&id, &lock(&s));
    Ok(json_response(StatusCode::OK, &body))
}

async fn delete_session(State(state): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> Response {
    let scope = format!("DELETE {id}");
    let st = state.clone();
    idempotent(&state, &headers, scope, || async move {
        if st.store.remove(&id) {
            StatusCode::NO_CONTENT.into_response()
        } else {
            ApiError::not_found(&id).into_response()
        }
    })
    .await
}

/// Either `{"strokes": [...]}` or a bare stroke array.
#[derive(Deserialize)]
#[serde(untagged)]
enum StrokeDocument {
    Wrapped { strokes: Vec<ScribbleStroke> },
    Bare(Vec<ScribbleStroke>),
}

async fn submit_scribbles(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> Response {
    let scope = format!("POST {id}/scribbles");
    let st = state.clone();
    idempotent(&state, &headers, scope, || async move {
        let run = async {
            let doc: StrokeDocument = serde_json::from_slice(&body).map_err(|e| {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "malformed-strokes", e.to_string())
            })?;
            let strokes = match doc {
                StrokeDocument::Wrapped { strokes } | StrokeDocument::Bare(strokes) => strokes,
            };
            let s = session_of(&st, &id)?;
            let id2 = id.clone();
            blocking(move || {
                let mut g = lock(&s);
                g.submit_scribbles(strokes)?;
                Ok::<_, Error>(SessionResource::of(&id2, &g))
            })
            .await?
            .map_err(ApiError::from)
        };
        match run.await {
            Ok(r) => json_response(StatusCode::OK, &r),
            Err(e) => e.into_response(),
        }
    })
    .await
}

async fn finalize(State(state): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> Response {
    let scope = format!("POST {id}/finalize");
    let st = state.clone();
    idempotent(&state, &headers, scope, || async move {
        let run = async {
            let s = session_of(&st, &id)?;
            let id2 = id.clone();
            blocking(move || {
                let mut g = lock(&s);
                g.finalize()?;
                Ok::<_, Error>(SessionResource::of(&id2, &g))
            })
            .await?
            .map_err(ApiError::from)
        };
        match run.await {
            Ok(r) => json_response(StatusCode::OK, &r),
            Err(e) => e.into_response(),
        }
    })
    .await
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

fn not_finalized() -> ApiError {
    ApiError::new(StatusCode::CONFLICT, "wrong-phase", "session is not finalized")
}

async fn trimap_png(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = session_of(&state, &id)?;
    let g = lock(&s);
    let res = g.result().ok_or_else(not_finalized)?;
    Ok(png(res.trimap.to_png_bytes()?))
}

async fn alpha_png(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = session_of(&state, &id)?;
    let g = lock(&s);
    let res = g.result().ok_or_else(not_finalized)?;
    Ok(png(res.alpha.to_png_bytes()?))
}

async fn overlay_png(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = session_of(&state, &id)?;
    let bytes = blocking(move || encode_rgb_png(&lock(&s).overlay().to_rgb8())).await??;
    Ok(png(bytes))
}
