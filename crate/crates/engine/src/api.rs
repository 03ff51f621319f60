//! HTTP service for the seller console.
//!
//! | Method | Path | Response |
//! |---|---|---|
//! | GET | `/healthz` | `{"status":"ok","model_version":n}` |
//! | GET | `/streams` | `[StreamInfo]` |
//! | GET | `/streams/{id}/focuses?since_ms=` | `[SegmentRecord]` with `start_ms >= since_ms` |
//! | GET | `/streams/{id}/tracklets` | `[TrackletSummary]` |
//! | POST | `/streams/{id}/feedback` | `FeedbackRequest` → `FeedbackEvent` (201 new, 200 repeat) |
//! | GET | `/streams/{id}/feedback` | `[FeedbackEvent]` |
//! | GET | `/streams/{id}/events?since_seq=` | NDJSON of `LiveEvent`, held open while the stream runs |
//!
//! Errors are `{"error": code, "message": text}` with codes `bad_request`,
//! `not_found` and `conflict`.

use std::collections::VecDeque;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::stream;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast::error::RecvError;
use tokio::sync::broadcast::Receiver;

use crate::service::{Engine, FeedbackRequest, LiveEvent, ServiceError, StreamState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    pub message: String,
}

struct Failure(StatusCode, String);

impl Failure {
    fn bad_request(msg: impl Into<String>) -> Self {
        Self(StatusCode::BAD_REQUEST, msg.into())
    }

    fn unknown_stream(id: &str) -> Self {
        Self(StatusCode::NOT_FOUND, format!("unknown stream {id}"))
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let code = match self.0 {
            StatusCode::NOT_FOUND => "not_found",
            StatusCode::CONFLICT => "conflict",
            _ => "bad_request",
        };
        let body = ApiError {
            error: code.into(),
            message: self.1,
        };
        (self.0, Json(body)).into_response()
    }
}

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::UnknownStream(_) | ServiceError::UnknownSegment { .. } => StatusCode::NOT_FOUND,
            ServiceError::Conflict { .. } => StatusCode::CONFLICT,
            ServiceError::NoAnchor { .. } | ServiceError::EmptySeller => StatusCode::BAD_REQUEST,
            ServiceError::Engine(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, Failure>;

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/streams", get(list_streams))
        .route("/streams/{id}/focuses", get(focuses))
        .route("/streams/{id}/tracklets", get(tracklets))
        .route("/streams/{id}/feedback", get(list_feedback).post(post_feedback))
        .route("/streams/{id}/events", get(events))
        .fallback(|| async { Failure(StatusCode::NOT_FOUND, "no such route".into()) })
        .with_state(engine)
}

/// Binds and serves until `shutdown` resolves.
pub async fn serve(
    engine: Arc<Engine>,
    bind: &str,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(shutdown)
        .await
}

fn stream_of(engine: &Engine, id: &str) -> ApiResult<Arc<StreamState>> {
    engine.stream(id).ok_or_else(|| Failure::unknown_stream(id))
}

/// Parses a query string by hand so malformed values get the JSON error body.
fn query_u64(Query(pairs): &Query<Vec<(String, String)>>, key: &str) -> ApiResult<u64> {
    if let Some((k, _)) = pairs.iter().find(|(k, _)| k != key) {
        return Err(Failure::bad_request(format!("unknown query parameter {k:?}")));
    }
    match pairs.iter().find(|(k, _)| k == key) {
        None => Ok(0),
        Some((_, v)) => v
            .parse()
            .map_err(|_| Failure::bad_request(format!("{key} must be a non-negative integer, got {v:?}"))),
    }
}

async fn healthz(State(engine): State<Arc<Engine>>) -> impl IntoResponse {
    Json(serde_json::json!({
        "status": "ok",
        "model_version": engine.snapshots().load().version,
    }))
}

async fn list_streams(State(engine): State<Arc<Engine>>) -> impl IntoResponse {
    Json(engine.streams())
}

async fn focuses(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    q: Query<Vec<(String, String)>>,
) -> ApiResult<impl IntoResponse> {
    let since = query_u64(&q, "since_ms")?;
    Ok(Json(stream_of(&engine, &id)?.segments(since)))
}

async fn tracklets(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(stream_of(&engine, &id)?.tracklets()))
}

async fn list_feedback(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(stream_of(&engine, &id)?.feedback()))
}

async fn post_feedback(State(engine): State<Arc<Engine>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    stream_of(&engine, &id)?;
    let req: FeedbackRequest =
        serde_json::from_slice(&body).map_err(|e| Failure::bad_request(format!("invalid feedback body: {e}")))?;
    let (event, created) = engine.submit_feedback(&id, req)?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(event)).into_response())
}

struct Push {
    state: Arc<StreamState>,
    pending: VecDeque<LiveEvent>,
    rx: Receiver<LiveEvent>,
    last: u64,
}

fn line(ev: &LiveEvent) -> Bytes {
    let mut buf = serde_json::to_vec(ev).expect("event serializes");
    buf.push(b'\n');
    Bytes::from(buf)
}

async fn next_line(mut p: Push) -> Option<(Result<Bytes, std::convert::Infallible>, Push)> {
    loop {
        if let Some(ev) = p.pending.pop_front() {
            if ev.seq <= p.last {
                continue;
            }
            p.last = ev.seq;
            let bytes = line(&ev);
            return Some((Ok(bytes), p));
        }
        if p.state.is_drained(p.last) {
            return None;
        }
        match p.rx.recv().await {
            Ok(ev) => p.pending.push_back(ev),
            // Fell behind the broadcast buffer: catch up from history.
            Err(RecvError::Lagged(_)) => p.pending.extend(p.state.history_after(p.last)),
            Err(RecvError::Closed) => return None,
        }
    }
}

async fn events(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    q: Query<Vec<(String, String)>>,
) -> ApiResult<Response> {
    let since = query_u64(&q, "since_seq")?;
    let state = stream_of(&engine, &id)?;
    let (history, rx) = state.subscribe(since);
    let push = Push {
        state,
        pending: history.into(),
        rx,
        last: since,
    };
    let body = Body::from_stream(stream::unfold(push, next_line));
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}
