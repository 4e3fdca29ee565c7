//! HTTP surface: a chat-completions endpoint plus admin routes.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use semgate_core::engine::{Engine, EngineError, LatencySummary, LookupOutcome};
use semgate_core::providers::ChatRequest;
use semgate_core::vectorops::normalize;
use serde::Deserialize;
use serde_json::{json, Value};

pub const HEADER_CACHE: &str = "x-semantic-cache";
pub const HEADER_SIMILARITY: &str = "x-semantic-cache-similarity";
pub const HEADER_ENTRY: &str = "x-semantic-cache-entry";
/// Request header that skips lookup and storage, forwarding straight upstream.
pub const HEADER_BYPASS: &str = "x-semantic-cache-bypass";

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    completion_ids: Arc<AtomicU64>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>) -> Self {
        Self {
            engine,
            completion_ids: Arc::new(AtomicU64::new(0)),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/chat/completions", post(chat_completions))
        .route("/admin/stats", get(admin_stats))
        .route("/admin/flush", post(admin_flush))
        .route("/admin/threshold", post(admin_threshold))
        .route("/admin/entries", post(admin_put_entry))
        .with_state(state)
}

fn error(status: StatusCode, kind: &str, message: impl Into<String>) -> Response {
    let body = json!({"error": {"message": message.into(), "type": kind}});
    (status, Json(body)).into_response()
}

fn engine_error(e: EngineError) -> Response {
    match e {
        EngineError::EmptyQuestion | EngineError::InvalidRequest(_) | EngineError::OutOfRange(_) => {
            error(StatusCode::BAD_REQUEST, "invalid_request_error", e.to_string())
        }
        EngineError::EmbeddingFailed(_) => {
            error(StatusCode::SERVICE_UNAVAILABLE, "embedding_error", e.to_string())
        }
        EngineError::UpstreamFailed(_) => error(StatusCode::BAD_GATEWAY, "upstream_error", e.to_string()),
        EngineError::Store(_) => error(StatusCode::INTERNAL_SERVER_ERROR, "server_error", e.to_string()),
    }
}

fn unix_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn completion_body(state: &AppState, model: &str, content: &str) -> Value {
    let n = state.completion_ids.fetch_add(1, Ordering::Relaxed);
    json!({
        "id": format!("chatcmpl-semgate-{n}"),
        "object": "chat.completion",
        "created": unix_secs(),
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop"
        }]
    })
}

fn cache_headers(outcome: &LookupOutcome) -> HeaderMap {
    let mut h = HeaderMap::new();
    h.insert(HEADER_CACHE, HeaderValue::from_static(outcome.kind.as_str()));
    if outcome.is_hit() {
        if let Some(s) = outcome.similarity {
            h.insert(HEADER_SIMILARITY, format!("{s:.4}").parse().unwrap());
        }
        if let Some(id) = outcome.matched_entry {
            h.insert(HEADER_ENTRY, id.into());
        }
    }
    h
}

async fn chat_completions(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let request: ChatRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, "invalid_request_error", format!("malformed body: {e}")),
    };
    if let Err(e) = request.validate() {
        return error(StatusCode::BAD_REQUEST, "invalid_request_error", e.to_string());
    }

    let bypass = headers
        .get(HEADER_BYPASS)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.eq_ignore_ascii_case("true") || v == "1");
    if bypass {
        return match state.engine.bypass(&request).await {
            Ok((answer, _)) => {
                let mut h = HeaderMap::new();
                h.insert(HEADER_CACHE, HeaderValue::from_static("bypass"));
                (h, Json(completion_body(&state, &request.model, &answer.content))).into_response()
            }
            Err(e) => engine_error(e),
        };
    }

    match state.engine.handle_request(&request, None).await {
        Ok(outcome) => {
            let body = completion_body(&state, &request.model, &outcome.response);
            (cache_headers(&outcome), Json(body)).into_response()
        }
        Err(e) => engine_error(e),
    }
}

fn latency_json(s: &LatencySummary) -> Value {
    json!({"mean": s.mean_ms, "p50": s.p50_ms, "p95": s.p95_ms})
}

async fn admin_stats(State(state): State<AppState>) -> Json<Value> {
    let m = state.engine.metrics_snapshot();
    let s = state.engine.store().stats();
    let partitions: Vec<Value> = s
        .partitions
        .iter()
        .map(|p| json!({"dim": p.dim, "entries": p.entries}))
        .collect();
    Json(json!({
        "hits": m.hits,
        "misses": m.misses,
        "hit_rate": m.hit_rate(),
        "entries": s.total_entries,
        "tombstones": s.total_tombstones,
        "partitions": partitions,
        "latency": {"hit": latency_json(&m.hit_latency), "miss": latency_json(&m.miss_latency)},
        "threshold": state.engine.threshold(),
    }))
}

async fn admin_flush(State(state): State<AppState>) -> Json<Value> {
    let removed = state.engine.store().clear();
    Json(json!({"removed": removed}))
}

#[derive(Deserialize)]
struct ThresholdBody {
    threshold: f64,
}

async fn admin_threshold(State(state): State<AppState>, body: Bytes) -> Response {
    let parsed: ThresholdBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, "invalid_request_error", e.to_string()),
    };
    match state.engine.set_threshold(parsed.threshold) {
        Ok(previous) => Json(json!({"previous": previous, "current": parsed.threshold})).into_response(),
        Err(e) => engine_error(e),
    }
}

#[derive(Deserialize)]
struct PutEntryBody {
    question: String,
    response: String,
    ttl_secs: Option<u64>,
}

/// Seeds the cache with a known question/response pair.
async fn admin_put_entry(State(state): State<AppState>, body: Bytes) -> Response {
    let parsed: PutEntryBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, "invalid_request_error", e.to_string()),
    };
    if parsed.question.trim().is_empty() || parsed.response.is_empty() {
        return error(StatusCode::BAD_REQUEST, "invalid_request_error", "question and response must be non-empty");
    }
    let embedding = match state.engine.embedder().embed(&parsed.question).await {
        Ok(e) => e,
        Err(e) => return engine_error(EngineError::EmbeddingFailed(e)),
    };
    let unit = match normalize(&embedding) {
        Ok(u) => u,
        Err(e) => return error(StatusCode::SERVICE_UNAVAILABLE, "embedding_error", e.to_string()),
    };
    match state
        .engine
        .store()
        .put(&parsed.question, &unit, &parsed.response, parsed.ttl_secs)
    {
        Ok(id) => Json(json!({"entry_id": id})).into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, "invalid_request_error", e.to_string()),
    }
}
