//! JSON over HTTP front end for [`Service`].

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;

use crate::service::{AcceptRequest, FeedbackRequest, Service, ServiceError, StartRequest, WIRE_VERSION};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let message = self.to_string();
        let (code, body) = match self {
            ServiceError::NoModel => (StatusCode::SERVICE_UNAVAILABLE, json!({ "version": WIRE_VERSION, "error": message })),
            ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, json!({ "version": WIRE_VERSION, "error": message })),
            ServiceError::UnknownSession(_) => (StatusCode::NOT_FOUND, json!({ "version": WIRE_VERSION, "error": message })),
            ServiceError::Conflict { state, .. } => (
                StatusCode::CONFLICT,
                json!({ "version": WIRE_VERSION, "error": message, "state": state }),
            ),
            ServiceError::Internal(_) => (
                StatusCode::INTERNAL_SERVER_ERROR,
                json!({ "version": WIRE_VERSION, "error": message }),
            ),
        };
        (code, Json(body)).into_response()
    }
}

type Reply<T> = Result<Json<T>, ServiceError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ServiceError::BadRequest(e.body_text()))
}

/// Runs `f` off the async workers; decoding and updates are CPU bound.
async fn blocking<T, F>(service: Arc<Service>, f: F) -> Reply<T>
where
    T: Serialize + Send + 'static,
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&service))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
        .map(Json)
}

async fn start(State(s): State<Arc<Service>>, payload: Result<Json<StartRequest>, JsonRejection>) -> Reply<impl Serialize> {
    let req = body(payload)?;
    blocking(s, move |s| s.start_session(&req)).await
}

async fn show(State(s): State<Arc<Service>>, Path(id): Path<u64>) -> Reply<impl Serialize> {
    blocking(s, move |s| s.session(id)).await
}

async fn feedback(
    State(s): State<Arc<Service>>,
    Path(id): Path<u64>,
    payload: Result<Json<FeedbackRequest>, JsonRejection>,
) -> Reply<impl Serialize> {
    let req = body(payload)?;
    blocking(s, move |s| s.feedback(id, &req)).await
}

async fn accept(
    State(s): State<Arc<Service>>,
    Path(id): Path<u64>,
    payload: Option<Json<AcceptRequest>>,
) -> Reply<impl Serialize> {
    let req = payload.map(|Json(r)| r).unwrap_or_default();
    blocking(s, move |s| s.accept(id, &req)).await
}

async fn queue(State(s): State<Arc<Service>>) -> Reply<impl Serialize> {
    blocking(s, |s| s.queue()).await
}

async fn metrics(State(s): State<Arc<Service>>) -> Json<impl Serialize> {
    Json(s.metrics())
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "version": WIRE_VERSION, "status": "ok" }))
}

/// Routes:
/// `POST /session`, `GET /session/{id}`, `POST /session/{id}/feedback`,
/// `POST /session/{id}/accept`, `GET /queue`, `GET /metrics`, `GET /health`.
pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/session", post(start))
        .route("/session/{id}", get(show))
        .route("/session/{id}/feedback", post(feedback))
        .route("/session/{id}/accept", post(accept))
        .route("/queue", get(queue))
        .route("/metrics", get(metrics))
        .route("/health", get(health))
        .with_state(service)
}
