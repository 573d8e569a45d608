//! HTTP diagnosis service.
//!
//! `GET /healthz`, `GET /metadata` and `POST /predict` (multipart field
//! `image`), plus the static upload page at `/`. Loaded weights are shared
//! read-only across requests; inference runs on the blocking pool.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::services::ServeDir;

use fundus_core::data::{decode_and_resize, INPUT_SIZE};
use fundus_core::network::{check_threshold, DEFAULT_THRESHOLD};
use fundus_core::{model_version, predict, DataError, Label, ModelError, ModelWeights};

pub const MAX_UPLOAD_BYTES: usize = 10 * 1024 * 1024;
pub const REQUEST_TIMEOUT: Duration = Duration::from_secs(30);
pub const INPUT_SHAPE: [usize; 3] = [INPUT_SIZE, INPUT_SIZE, 3];

const FALLBACK_PAGE: &str = include_str!("../static/index.html");

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("model expects input {found:?}, the service decodes images to {expected:?}")]
    InputShape { expected: [usize; 3], found: [usize; 3] },
    #[error(transparent)]
    Threshold(#[from] ModelError),
    #[error("ui directory {0} does not exist")]
    UiDir(PathBuf),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    pub threshold: f64,
    /// Directory holding the UI bundle; the built-in page is served when unset.
    pub ui_dir: Option<PathBuf>,
    pub max_upload_bytes: usize,
    pub timeout: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            threshold: DEFAULT_THRESHOLD,
            ui_dir: None,
            max_upload_bytes: MAX_UPLOAD_BYTES,
            timeout: REQUEST_TIMEOUT,
        }
    }
}

/// Machine-readable error codes returned in `{"error": code, "detail": ...}`.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    MissingImage,
    PayloadTooLarge,
    DecodeError,
    Timeout,
    InternalError,
    NotFound,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::MissingImage | ErrorCode::DecodeError => StatusCode::BAD_REQUEST,
            ErrorCode::PayloadTooLarge => StatusCode::PAYLOAD_TOO_LARGE,
            ErrorCode::Timeout => StatusCode::SERVICE_UNAVAILABLE,
            ErrorCode::InternalError => StatusCode::INTERNAL_SERVER_ERROR,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorCode,
    pub detail: String,
}

#[derive(Debug)]
pub struct ApiError(pub ErrorBody);

impl ApiError {
    fn new(error: ErrorCode, detail: impl Into<String>) -> Self {
        Self(ErrorBody { error, detail: detail.into() })
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0.error.status(), Json(self.0)).into_response()
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct PredictionResponse {
    pub label: Label,
    pub score: f64,
    pub threshold: f64,
    pub model_version: String,
    pub latency_ms: f64,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Metadata {
    pub model_version: String,
    pub input_shape: [usize; 3],
    pub threshold: f64,
    pub parameter_count: usize,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_version: String,
}

#[derive(Clone)]
pub struct AppState {
    weights: Arc<ModelWeights>,
    model_version: String,
    threshold: f64,
    timeout: Duration,
}

impl AppState {
    pub fn new(weights: ModelWeights, threshold: f64, timeout: Duration) -> Result<Self, ServeError> {
        check_threshold(threshold)?;
        let found = weights.config.input;
        if found != INPUT_SHAPE {
            return Err(ServeError::InputShape { expected: INPUT_SHAPE, found });
        }
        Ok(Self { model_version: model_version(&weights), weights: Arc::new(weights), threshold, timeout })
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn model_version(&self) -> &str {
        &self.model_version
    }
}

/// Builds the service. Fails if the weights do not fit the service input
/// or the UI directory is missing.
pub fn router(weights: ModelWeights, config: &ServerConfig) -> Result<Router, ServeError> {
    let state = AppState::new(weights, config.threshold, config.timeout)?;
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/metadata", get(metadata))
        .route("/predict", post(handle_predict).layer(DefaultBodyLimit::max(config.max_upload_bytes)))
        .with_state(state);
    let app = match &config.ui_dir {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(ServeError::UiDir(dir.clone()));
            }
            api.fallback_service(ServeDir::new(dir))
        }
        None => api.route("/", get(|| async { Html(FALLBACK_PAGE) })).fallback(not_found),
    };
    Ok(app)
}

/// Binds and serves until ctrl-c.
pub async fn serve(weights: ModelWeights, config: ServerConfig) -> Result<(), ServeError> {
    let app = router(weights, &config)?;
    let listener = tokio::net::TcpListener::bind(config.bind)
        .await
        .map_err(|source| ServeError::Bind { addr: config.bind, source })?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        })
        .await?;
    Ok(())
}

async fn healthz(State(state): State<AppState>) -> Json<Health> {
    Json(Health { status: "ok".into(), model_version: state.model_version.clone() })
}

async fn metadata(State(state): State<AppState>) -> Json<Metadata> {
    Json(Metadata {
        model_version: state.model_version.clone(),
        input_shape: INPUT_SHAPE,
        threshold: state.threshold,
        parameter_count: state.weights.parameter_count(),
    })
}

async fn not_found() -> ApiError {
    ApiError::new(ErrorCode::NotFound, "no such route")
}

pub async fn handle_predict(
    State(state): State<AppState>,
    multipart: Result<Multipart, MultipartRejection>,
) -> Result<Json<PredictionResponse>, ApiError> {
    let start = Instant::now();
    let timeout = state.timeout;
    match tokio::time::timeout(timeout, predict_inner(state, multipart, start)).await {
        Ok(r) => r.map(Json),
        Err(_) => Err(ApiError::new(ErrorCode::Timeout, format!("request exceeded {} s", timeout.as_secs_f64()))),
    }
}

async fn predict_inner(
    state: AppState,
    multipart: Result<Multipart, MultipartRejection>,
    start: Instant,
) -> Result<PredictionResponse, ApiError> {
    let bytes = read_image_field(multipart).await?;
    let weights = Arc::clone(&state.weights);
    let threshold = state.threshold;
    let diagnosis = tokio::task::spawn_blocking(move || {
        let image = decode_and_resize(&bytes).map_err(|e| match e {
            DataError::Decode(msg) => ApiError::new(ErrorCode::DecodeError, msg),
            other => ApiError::new(ErrorCode::InternalError, other.to_string()),
        })?;
        predict(&weights, &image, threshold).map_err(|e| ApiError::new(ErrorCode::InternalError, e.to_string()))
    })
    .await
    .map_err(|e| ApiError::new(ErrorCode::InternalError, e.to_string()))??;
    Ok(PredictionResponse {
        label: diagnosis.label,
        score: diagnosis.score,
        threshold: diagnosis.threshold,
        model_version: state.model_version.clone(),
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

async fn read_image_field(multipart: Result<Multipart, MultipartRejection>) -> Result<Vec<u8>, ApiError> {
    let mut multipart = multipart.map_err(|e| ApiError::new(ErrorCode::MissingImage, e.body_text()))?;
    loop {
        let field = multipart.next_field().await.map_err(multipart_error)?;
        let Some(field) = field else {
            return Err(ApiError::new(ErrorCode::MissingImage, "multipart field `image` is required"));
        };
        if field.name() != Some("image") {
            continue;
        }
        let bytes = field.bytes().await.map_err(multipart_error)?;
        if bytes.is_empty() {
            return Err(ApiError::new(ErrorCode::MissingImage, "field `image` is empty"));
        }
        return Ok(bytes.to_vec());
    }
}

fn multipart_error(e: axum::extract::multipart::MultipartError) -> ApiError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::new(ErrorCode::PayloadTooLarge, "upload exceeds the size limit")
    } else {
        ApiError::new(ErrorCode::MissingImage, e.body_text())
    }
}
