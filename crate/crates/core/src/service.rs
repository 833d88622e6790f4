//! Read-only HTTP inference service: `POST /edit`, `GET /health`.

use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};

use crate::data::png_dimensions;
use crate::edit::{edit_png, GeneratorSnapshot};
use crate::error::Error;
use crate::stu::AttributeValue;

pub const DEFAULT_PORT: u16 = 8089;
pub const DEFAULT_MAX_EDGE: usize = 2048;
const BODY_LIMIT: usize = 128 << 20;

#[derive(Debug, Deserialize)]
pub struct EditRequest {
    /// Base64 PNG, RGB or RGBA.
    pub image: String,
    /// Base64 PNG; absent means the image's non-transparent pixels.
    #[serde(default)]
    pub mask: Option<String>,
    pub attribute: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelInfo {
    pub attribute_name: String,
    pub checkpoint_id: String,
    pub image_size: usize,
    /// Masked mean absolute difference between the response and the request image.
    pub l1_to_input: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EditResponse {
    pub image: String,
    pub model_info: ModelInfo,
    pub latency_ms: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Health {
    pub status: String,
    pub checkpoint_id: Option<String>,
    pub attribute_name: Option<String>,
}

/// Shared between handlers; the model slot is filled once loading finishes.
#[derive(Clone)]
pub struct AppState {
    model: Arc<RwLock<Option<GeneratorSnapshot>>>,
    pub max_edge: usize,
}

impl AppState {
    pub fn empty(max_edge: usize) -> Self {
        AppState { model: Arc::new(RwLock::new(None)), max_edge }
    }

    pub fn with_model(model: GeneratorSnapshot, max_edge: usize) -> Self {
        let s = Self::empty(max_edge);
        s.set_model(model);
        s
    }

    pub fn set_model(&self, model: GeneratorSnapshot) {
        *self.model.write().expect("model lock") = Some(model);
    }

    fn model(&self) -> Option<GeneratorSnapshot> {
        self.model.read().expect("model lock").clone()
    }
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": msg.into() }))).into_response()
}

async fn health(State(state): State<AppState>) -> Response {
    match state.model() {
        Some(m) => Json(Health {
            status: "ok".into(),
            checkpoint_id: Some(m.checkpoint_id),
            attribute_name: Some(m.attribute),
        })
        .into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(Health { status: "loading".into(), checkpoint_id: None, attribute_name: None }),
        )
            .into_response(),
    }
}

async fn edit(State(state): State<AppState>, body: Bytes) -> Response {
    let start = Instant::now();
    let Some(model) = state.model() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "model not loaded");
    };
    let req: EditRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    let att = match AttributeValue::new(req.attribute) {
        Ok(a) => a,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let image = match B64.decode(req.image.as_bytes()) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("image is not base64: {e}")),
    };
    let mask = match req.mask.as_deref().map(|m| B64.decode(m.as_bytes())).transpose() {
        Ok(m) => m,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("mask is not base64: {e}")),
    };
    match png_dimensions(&image) {
        Ok((w, h)) if w.max(h) > state.max_edge => {
            return error(
                StatusCode::PAYLOAD_TOO_LARGE,
                format!("image is {w}x{h}; the longest edge may be at most {}", state.max_edge),
            )
        }
        Ok(_) => {}
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    }
    let max_edge = state.max_edge;
    let info_model = model.clone();
    let job = tokio::task::spawn_blocking(move || {
        model.with_generator(|g| edit_png(g, &image, mask.as_deref(), att, max_edge))
    });
    let result = match job.await {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => Err(e),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, format!("inference task failed: {e}")),
    };
    match result {
        Ok(out) => Json(EditResponse {
            image: B64.encode(&out.png),
            model_info: ModelInfo {
                attribute_name: info_model.attribute.clone(),
                checkpoint_id: info_model.checkpoint_id.clone(),
                image_size: info_model.image_size(),
                l1_to_input: out.l1_to_input,
            },
            latency_ms: start.elapsed().as_secs_f64() * 1e3,
        })
        .into_response(),
        Err(e @ (Error::Image(_) | Error::Config(_) | Error::Domain(_))) => error(StatusCode::BAD_REQUEST, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(state: AppState) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/health", get(health))
        .route("/edit", post(edit))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .layer(cors)
        .with_state(state)
}

/// Serves `state` on `addr` until the process ends.
pub fn serve(addr: std::net::SocketAddr, state: AppState) -> crate::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("tokio runtime", e))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::io(addr.to_string(), e))?;
        eprintln!("listening on http://{addr}");
        axum::serve(listener, router(state)).await.map_err(|e| Error::io(addr.to_string(), e))
    })
}
