//! HTTP service for the browser companion.
//!
//! | Method | Path | Body / query | Response |
//! |---|---|---|---|
//! | `POST` | `/audio` | WAV bytes | `{"id","duration_s","sample_rate"}` |
//! | `GET` | `/audio/{id}/spectrogram` | `start_s`, `end_s` (optional) | grayscale PNG, 128 rows |
//! | `POST` | `/analyze` | `{"id","start_s","end_s","model"}` | analysis JSON, or tick lines with `Accept: text/plain` |
//! | `GET` | `/audio/{id}/annotated` | `start_s`, `end_s`, `model` | annotated RGB PNG |
//!
//! The analysis JSON carries the tick list (`x`, `label`, `confidence`), shift markers,
//! label runs and an `annotated` path that fetches the matching annotated PNG. The text
//! form is one `x,label,confidence` line per tick. Errors are `{"error": "..."}` with
//! status 400 (bad range or body), 404 (unknown id), 409 (model not loaded), 413 (body
//! too large) or 415 (undecodable audio).

use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use avra_core::analyzer::{self, Classifier, Run};
use avra_core::audio::{decode_wav, resample_linear, WORKING_SAMPLE_RATE};
use avra_core::dsp::{MelConfig, MelRenderer, StftConfig};
use avra_core::model_io::ModelKind;
use avra_core::{Analysis, Audio, Cnn, Spectrogram, Svm};
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lru::LruCache;
use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_BODY_BYTES: usize = 50 * 1024 * 1024;
pub const DEFAULT_STORE_CAPACITY: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("unknown audio id `{0}`")]
    NotFound(String),
    #[error("model `{0}` is not available")]
    ModelUnavailable(String),
    #[error("cannot decode audio: {0}")]
    Unsupported(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::ModelUnavailable(_) => StatusCode::CONFLICT,
            ApiError::Unsupported(_) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<avra_core::Error> for ApiError {
    fn from(e: avra_core::Error) -> Self {
        use avra_core::Error as E;
        match e {
            E::Selection(_) | E::InvalidArgument(_) => ApiError::BadRequest(e.to_string()),
            _ => ApiError::Internal(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}

/// Uploaded audio at the working sample rate, plus its lazily rendered full spectrogram.
pub struct Session {
    pub audio: Audio,
    pub source_sample_rate: u32,
    full_spectrogram: OnceLock<Arc<Spectrogram>>,
}

/// Bounded id → session map with least-recently-used eviction.
pub struct SessionStore {
    entries: Mutex<LruCache<String, Arc<Session>>>,
    next_id: AtomicU64,
}

impl SessionStore {
    pub fn new(capacity: usize) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).expect("nonzero");
        Self {
            entries: Mutex::new(LruCache::new(cap)),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn insert(&self, audio: Audio, source_sample_rate: u32) -> String {
        let id = format!("a{:08x}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let session = Arc::new(Session {
            audio,
            source_sample_rate,
            full_spectrogram: OnceLock::new(),
        });
        self.entries.lock().unwrap().put(id.clone(), session);
        id
    }

    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        self.entries.lock().unwrap().get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.entries.lock().unwrap().cap().get()
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub max_body_bytes: usize,
    pub store_capacity: usize,
    pub mel: MelConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
            store_capacity: DEFAULT_STORE_CAPACITY,
            mel: MelConfig::default(),
        }
    }
}

/// Shared, immutable-after-startup service state.
pub struct AppState {
    pub store: SessionStore,
    pub svm: Option<Svm>,
    pub cnn: Option<Cnn>,
    renderer: MelRenderer<f64>,
    max_body_bytes: usize,
}

impl AppState {
    pub fn new(config: ServiceConfig, svm: Option<Svm>, cnn: Option<Cnn>) -> avra_core::Result<Self> {
        Ok(Self {
            store: SessionStore::new(config.store_capacity),
            svm,
            cnn,
            renderer: MelRenderer::new(StftConfig::default(), config.mel, WORKING_SAMPLE_RATE)?,
            max_body_bytes: config.max_body_bytes,
        })
    }

    fn model(&self, name: &str) -> Result<&dyn Classifier<f64>, ApiError> {
        let found: Option<&dyn Classifier<f64>> = match name.to_ascii_lowercase().as_str() {
            "svm" => self.svm.as_ref().map(|m| m as _),
            "cnn" => self.cnn.as_ref().map(|m| m as _),
            _ => None,
        };
        found.ok_or_else(|| ApiError::ModelUnavailable(name.to_string()))
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.store.get(id).ok_or_else(|| ApiError::NotFound(id.to_string()))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.max_body_bytes;
    Router::new()
        .route("/audio", post(upload))
        .route("/audio/{id}/spectrogram", get(spectrogram))
        .route("/audio/{id}/annotated", get(annotated))
        .route("/analyze", post(analyze))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct UploadResponse {
    pub id: String,
    pub duration_s: f64,
    pub sample_rate: u32,
}

async fn upload(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<UploadResponse>, ApiError> {
    let decoded = decode_wav::<f64>(&body).map_err(|e| ApiError::Unsupported(e.to_string()))?;
    if decoded.is_empty() {
        return Err(ApiError::Unsupported("audio has no samples".into()));
    }
    let source_rate = decoded.sample_rate();
    let duration_s = decoded.duration_seconds();
    let audio = tokio::task::spawn_blocking(move || resample_linear(&decoded, WORKING_SAMPLE_RATE))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    let id = state.store.insert(audio, source_rate);
    Ok(Json(UploadResponse {
        id,
        duration_s,
        sample_rate: source_rate,
    }))
}

#[derive(Debug, Deserialize)]
struct RangeQuery {
    start_s: Option<f64>,
    end_s: Option<f64>,
    model: Option<String>,
}

fn resolve_range(session: &Session, start: Option<f64>, end: Option<f64>) -> (f64, f64) {
    (start.unwrap_or(0.0), end.unwrap_or_else(|| session.audio.duration_seconds()))
}

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

fn render(state: &AppState, session: &Session, start: f64, end: f64) -> Result<Arc<Spectrogram>, ApiError> {
    let full = start == 0.0 && end == session.audio.duration_seconds();
    if full {
        if let Some(s) = session.full_spectrogram.get() {
            return Ok(s.clone());
        }
    }
    let img = Arc::new(state.renderer.render(&session.audio.segment(start, end)?)?);
    if full {
        let _ = session.full_spectrogram.set(img.clone());
    }
    Ok(img)
}

async fn blocking<R: Send + 'static>(
    f: impl FnOnce() -> Result<R, ApiError> + Send + 'static,
) -> Result<R, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn spectrogram(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<RangeQuery>,
) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let (start, end) = resolve_range(&session, q.start_s, q.end_s);
    let png = blocking(move || Ok(render(&state, &session, start, end)?.to_png()?)).await?;
    Ok(png_response(png))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AnalyzeRequest {
    pub id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub model: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TickJson {
    pub x: usize,
    pub label: u8,
    pub confidence: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunJson {
    pub label: u8,
    pub start_x: usize,
    pub end_x: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AnalyzeResponse {
    pub id: String,
    pub model: String,
    pub start_s: f64,
    pub end_s: f64,
    pub width: usize,
    pub height: usize,
    pub tick_spacing: usize,
    pub ticks: Vec<TickJson>,
    pub markers: Vec<usize>,
    pub runs: Vec<RunJson>,
    /// Path of the annotated PNG for this exact request.
    pub annotated: String,
}

fn run_analysis(state: &AppState, id: &str, start: f64, end: f64, model: &str) -> Result<Analysis, ApiError> {
    let session = state.session(id)?;
    let model = state.model(model)?;
    let img = render(state, &session, start, end)?;
    Ok(analyzer::analyze_image(&img, model)?)
}

fn model_name(kind: ModelKind) -> String {
    kind.name().to_string()
}

async fn analyze(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let req: AnalyzeRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(format!("invalid request body: {e}")))?;
    state.session(&req.id)?;
    let kind = state.model(&req.model)?.kind();
    let text = headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("text/plain"));
    let r = req.clone();
    let result = blocking(move || run_analysis(&state, &r.id, r.start_s, r.end_s, &r.model)).await?;
    if text {
        return Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], result.to_text()).into_response());
    }
    let model = model_name(kind);
    let body = AnalyzeResponse {
        annotated: format!(
            "/audio/{}/annotated?start_s={}&end_s={}&model={}",
            req.id, req.start_s, req.end_s, model
        ),
        id: req.id,
        model,
        start_s: req.start_s,
        end_s: req.end_s,
        width: result.spectrogram.width(),
        height: result.spectrogram.height(),
        tick_spacing: analyzer::TICK_SPACING,
        ticks: result
            .ticks
            .iter()
            .map(|t| TickJson {
                x: t.x,
                label: t.label.code(),
                confidence: t.confidence,
            })
            .collect(),
        markers: result.markers.clone(),
        runs: result.runs().iter().map(run_json).collect(),
    };
    Ok(Json(body).into_response())
}

fn run_json(r: &Run) -> RunJson {
    RunJson {
        label: r.label.code(),
        start_x: r.start_x,
        end_x: r.end_x,
    }
}

async fn annotated(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<RangeQuery>,
) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let model = q.model.ok_or_else(|| ApiError::BadRequest("missing `model` parameter".into()))?;
    state.model(&model)?;
    let (start, end) = resolve_range(&session, q.start_s, q.end_s);
    let png = blocking(move || Ok(run_analysis(&state, &id, start, end, &model)?.annotate().to_png()?)).await?;
    Ok(png_response(png))
}
