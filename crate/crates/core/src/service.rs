//! HTTP inference service: upload audio once, then re-run inference under
//! different emotion weights and settings.
//!
//! Endpoints:
//! - `POST /audio` with a mono 16-bit WAV body → `{"audio_id": ...}`, the
//!   hex SHA-256 of the body.
//! - `POST /infer` with [`InferRequest`] → the keyed-curve document plus a
//!   dense preview of every controller.
//! - `GET /models` → configurations, controllers and emotion names.
//! - `GET /schema` → JSON Schema of the `/infer` body.
//!
//! Errors are JSON `{"error": <code>, "message": <text>}`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tower_http::cors::CorsLayer;

use crate::audio::AudioClip;
use crate::dataset::hash_hex;
use crate::error::{Error, Result};
use crate::inference::{infer, InferenceResult, InferenceSettings, ModelSet};

/// JSON Schema of the `/infer` response body, also served at `GET /schema`.
pub const INFER_RESPONSE_SCHEMA: &str = include_str!("../schema/infer_response.schema.json");

/// Longest accepted upload, in seconds of audio.
pub const DEFAULT_MAX_AUDIO_SECONDS: f64 = 60.0;
/// Most dense points returned per controller.
pub const MAX_PREVIEW_POINTS: usize = 2000;
/// Raw body cap; large enough for 60 s of 192 kHz 16-bit mono.
const BODY_LIMIT_BYTES: usize = 32 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub max_audio_seconds: f64,
    /// Browser origin allowed by CORS, e.g. `http://localhost:5173`.
    pub allow_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            max_audio_seconds: DEFAULT_MAX_AUDIO_SECONDS,
            allow_origin: None,
        }
    }
}

/// Loaded models, uploaded audio and cached responses. Models never change
/// after construction.
pub struct SessionState {
    models: ModelSet,
    config: ServiceConfig,
    audio: RwLock<HashMap<String, Arc<AudioClip>>>,
    responses: Mutex<HashMap<(String, String), Bytes>>,
}

impl SessionState {
    pub fn new(models: ModelSet, config: ServiceConfig) -> Self {
        SessionState {
            models,
            config,
            audio: RwLock::new(HashMap::new()),
            responses: Mutex::new(HashMap::new()),
        }
    }

    pub fn models(&self) -> &ModelSet {
        &self.models
    }
}

/// Settings accepted over the wire; absent fields take the pipeline defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireSettings {
    pub key_threshold: Option<f64>,
    pub smooth_upper: Option<bool>,
    pub smooth_sigma: Option<f64>,
    pub rate: Option<u32>,
    pub tangent_filter_sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferRequest {
    pub audio_id: String,
    pub emotion_weights: Vec<f64>,
    #[serde(default)]
    pub settings: WireSettings,
    /// Reject weights outside [0, 1] instead of clamping them.
    #[serde(default)]
    pub strict: bool,
}

impl InferRequest {
    fn to_settings(&self) -> InferenceSettings {
        let mut s = InferenceSettings::new(self.emotion_weights.iter().map(|w| w.clamp(0.0, 1.0)).collect());
        let w = &self.settings;
        if let Some(v) = w.key_threshold {
            s.key_threshold = v;
        }
        if let Some(v) = w.smooth_upper {
            s.smooth_upper = v;
        }
        if let Some(v) = w.smooth_sigma {
            s.smooth_sigma = v;
        }
        if let Some(v) = w.rate {
            s.rate = v;
        }
        if let Some(v) = w.tangent_filter_sigma {
            s.tangent_filter_sigma = v;
        }
        s
    }
}

/// Dense values of one controller at `frames`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensePreview {
    pub configuration: String,
    pub controller: String,
    pub frames: Vec<u32>,
    pub values: Vec<f64>,
}

/// Body of a successful `/infer`: the keyed-curve document fields followed
/// by `dense_preview`.
#[derive(Debug, Clone, Serialize)]
pub struct InferResponse<'a> {
    #[serde(flatten)]
    pub result: &'a InferenceResult,
    pub dense_preview: Vec<DensePreview>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioUploaded {
    pub audio_id: String,
    pub sample_rate: u32,
    pub duration_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelsInfo {
    pub fps: f64,
    pub emotion_names: Vec<String>,
    pub configurations: Vec<ConfigurationInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationInfo {
    pub name: String,
    pub upper_face: bool,
    pub controllers: Vec<String>,
}

/// Machine-readable error body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    pub message: String,
}

struct Failure(StatusCode, ApiError);

impl Failure {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Failure(
            status,
            ApiError {
                error: code.into(),
                message: message.into(),
            },
        )
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::MonoRequired(_) => (StatusCode::BAD_REQUEST, "mono_required"),
            Error::Wav(_) | Error::UnsupportedAudio(_) => (StatusCode::BAD_REQUEST, "bad_wav"),
            Error::FingerprintMismatch(_) => (StatusCode::CONFLICT, "fingerprint_mismatch"),
            Error::Dimension { .. } => (StatusCode::BAD_REQUEST, "dimension_mismatch"),
            e if e.is_validation() => (StatusCode::BAD_REQUEST, "invalid_request"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Failure::new(status, code, e.to_string())
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

/// Picks at most `max_points` evenly strided frames, always including the
/// first and last frame.
pub fn preview_frames(frame_count: usize, max_points: usize) -> Vec<u32> {
    if frame_count == 0 || max_points == 0 {
        return Vec::new();
    }
    if frame_count <= max_points {
        return (0..frame_count as u32).collect();
    }
    let max_points = max_points.max(2);
    let step = (frame_count - 1).div_ceil(max_points - 1);
    let mut frames: Vec<u32> = (0..frame_count).step_by(step).map(|f| f as u32).collect();
    let last = (frame_count - 1) as u32;
    if *frames.last().expect("non-empty") != last {
        if frames.len() == max_points {
            frames.pop();
        }
        frames.push(last);
    }
    frames
}

fn dense_preview(result: &InferenceResult) -> Vec<DensePreview> {
    let frames = preview_frames(result.frame_count, MAX_PREVIEW_POINTS);
    let mut out = Vec::new();
    for (cfg, dense) in result.configurations.iter().zip(&result.dense) {
        for (ctrl, values) in cfg.controllers.iter().zip(dense) {
            out.push(DensePreview {
                configuration: cfg.name.clone(),
                controller: ctrl.name.clone(),
                frames: frames.clone(),
                values: frames.iter().map(|&f| values[f as usize]).collect(),
            });
        }
    }
    out
}

fn json_bytes(body: Bytes) -> Response {
    ([(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))], body).into_response()
}

async fn upload_audio(State(state): State<Arc<SessionState>>, body: Bytes) -> std::result::Result<Response, Failure> {
    if body.is_empty() {
        return Err(Failure::new(StatusCode::BAD_REQUEST, "bad_wav", "request body is empty"));
    }
    let id = hex::encode(Sha256::digest(&body));
    let clip = AudioClip::from_wav_bytes(&body)?;
    let duration = clip.duration_seconds();
    if duration > state.config.max_audio_seconds {
        return Err(Failure::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "audio_too_long",
            format!("audio lasts {duration:.1} s; the limit is {} s", state.config.max_audio_seconds),
        ));
    }
    let sample_rate = clip.sample_rate;
    state
        .audio
        .write()
        .expect("audio store poisoned")
        .entry(id.clone())
        .or_insert_with(|| Arc::new(clip));
    Ok(Json(AudioUploaded {
        audio_id: id,
        sample_rate,
        duration_seconds: duration,
    })
    .into_response())
}

async fn run_inference(
    State(state): State<Arc<SessionState>>,
    Json(request): Json<InferRequest>,
) -> std::result::Result<Response, Failure> {
    let audio = state
        .audio
        .read()
        .expect("audio store poisoned")
        .get(&request.audio_id)
        .cloned()
        .ok_or_else(|| Failure::new(StatusCode::NOT_FOUND, "unknown_audio", format!("no audio with id {}", request.audio_id)))?;
    state.models.verify_fingerprints()?;
    let n = state.models.n_emotions();
    if request.emotion_weights.len() != n {
        return Err(Failure::new(
            StatusCode::BAD_REQUEST,
            "dimension_mismatch",
            format!("expected {n} emotion weights, got {}", request.emotion_weights.len()),
        ));
    }
    if request.emotion_weights.iter().any(|w| !w.is_finite()) {
        return Err(Failure::new(StatusCode::BAD_REQUEST, "invalid_request", "emotion weights must be finite"));
    }
    if request.strict {
        if let Some(w) = request.emotion_weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Failure::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "weight_out_of_range",
                format!("emotion weight {w} lies outside [0, 1]"),
            ));
        }
    }
    let settings = request.to_settings();
    settings.validate(n)?;
    let key = (
        request.audio_id.clone(),
        hash_hex(&[serde_json::to_string(&settings).map_err(Error::from)?.as_bytes()]),
    );
    if let Some(body) = state.responses.lock().expect("response cache poisoned").get(&key) {
        return Ok(json_bytes(body.clone()));
    }
    let worker = Arc::clone(&state);
    let body = tokio::task::spawn_blocking(move || -> Result<Bytes> {
        let result = infer(&audio, &worker.models, &settings)?;
        let response = InferResponse {
            result: &result,
            dense_preview: dense_preview(&result),
        };
        Ok(Bytes::from(serde_json::to_vec(&response)?))
    })
    .await
    .map_err(|e| Error::Internal(format!("inference task failed: {e}")))??;
    state
        .responses
        .lock()
        .expect("response cache poisoned")
        .insert(key, body.clone());
    Ok(json_bytes(body))
}

async fn models_info(State(state): State<Arc<SessionState>>) -> Json<ModelsInfo> {
    let models = &state.models;
    Json(ModelsInfo {
        fps: models.fps(),
        emotion_names: models.emotion_names().to_vec(),
        configurations: models
            .triples
            .iter()
            .map(|t| {
                let c = t.configuration();
                ConfigurationInfo {
                    name: c.name.clone(),
                    upper_face: c.upper_face,
                    controllers: c.controller_names.clone(),
                }
            })
            .collect(),
    })
}

/// Builds the service's routes around `state`.
pub fn router(state: Arc<SessionState>) -> Result<Router> {
    let mut app = Router::new()
        .route("/audio", post(upload_audio))
        .route("/infer", post(run_inference))
        .route("/models", get(models_info))
        .route("/schema", get(|| async { json_bytes(Bytes::from_static(INFER_RESPONSE_SCHEMA.as_bytes())) }))
        .layer(DefaultBodyLimit::max(BODY_LIMIT_BYTES));
    if let Some(origin) = &state.config.allow_origin {
        let origin = HeaderValue::from_str(origin)
            .map_err(|_| Error::Invalid(format!("allow-origin {origin:?} is not a valid header value")))?;
        app = app.layer(
            CorsLayer::new()
                .allow_origin(origin)
                .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
                .allow_headers([header::CONTENT_TYPE]),
        );
    }
    Ok(app.with_state(state))
}

/// Serves on an already-bound listener until the task is dropped.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<SessionState>) -> Result<()> {
    let app = router(state)?;
    axum::serve(listener, app)
        .await
        .map_err(|e| Error::Internal(format!("server stopped: {e}")))
}

/// Port to listen on: `PORT` from the environment wins over `fallback`.
pub fn resolve_port(env_port: Option<&str>, fallback: u16) -> Result<u16> {
    match env_port {
        Some(p) => p
            .trim()
            .parse()
            .map_err(|_| Error::Invalid(format!("PORT={p:?} is not a port number"))),
        None => Ok(fallback),
    }
}

/// Loads checkpoints from `ckpt_dir` and serves on `0.0.0.0:port` until
/// interrupted.
pub fn run(ckpt_dir: &Path, port: u16, config: ServiceConfig) -> Result<()> {
    let models = ModelSet::load_dir(ckpt_dir)?;
    let state = Arc::new(SessionState::new(models, config));
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Internal(format!("tokio runtime: {e}")))?;
    runtime.block_on(async move {
        let addr = SocketAddr::from(([0, 0, 0, 0], port));
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::Internal(format!("cannot bind {addr}: {e}")))?;
        eprintln!("listening on http://{addr}");
        serve(listener, state).await
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preview_is_capped_and_keeps_endpoints() {
        for n in [1usize, 2, 10, 1999, 2000, 2001, 2002, 4000, 4001, 12345] {
            let f = preview_frames(n, MAX_PREVIEW_POINTS);
            assert!(f.len() <= MAX_PREVIEW_POINTS, "{n}: {}", f.len());
            assert_eq!(f[0], 0);
            assert_eq!(*f.last().unwrap() as usize, n - 1);
            assert!(f.windows(2).all(|w| w[0] < w[1]));
        }
        assert_eq!(preview_frames(5, 2000), vec![0, 1, 2, 3, 4]);
        assert!(preview_frames(0, 2000).is_empty());
    }

    #[test]
    fn port_from_environment_wins() {
        assert_eq!(resolve_port(Some("9090"), 8080).unwrap(), 9090);
        assert_eq!(resolve_port(None, 8080).unwrap(), 8080);
        assert!(resolve_port(Some("http"), 8080).is_err());
    }

    #[test]
    fn request_defaults_and_clamping() {
        let r: InferRequest = serde_json::from_str(r#"{"audio_id":"x","emotion_weights":[1.5,-0.2,0,0,0,0]}"#).unwrap();
        assert!(!r.strict);
        let s = r.to_settings();
        assert_eq!(s.emotion_weights, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.key_threshold, 0.5);
        assert_eq!(s.rate, 1);
        assert!(serde_json::from_str::<InferRequest>(r#"{"audio_id":"x","emotion_weights":[],"bogus":1}"#).is_err());
    }
}
