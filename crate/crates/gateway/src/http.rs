//! HTTP API under `/api/v1`, JSON bodies, plus the dashboard's static files
//! under `/ui/`.

use std::convert::Infallible;
use std::path::PathBuf;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use breathwatch_core::domain::{Millis, NodeId};
use breathwatch_core::rules::{ProfileViolation, ThresholdProfile};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::service::{AckError, AlertFilter, AlertStateFilter, Gateway, QueryError, ThresholdError};

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    violations: Vec<ProfileViolation>,
}

struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl ToString) -> ApiError {
        ApiError {
            status,
            body: ErrorBody {
                error: error.to_string(),
                violations: Vec::new(),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        let status = match e {
            QueryError::UnknownNode(_) => StatusCode::NOT_FOUND,
            QueryError::BadRange { .. } | QueryError::BadStep => StatusCode::BAD_REQUEST,
            QueryError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e)
    }
}

impl From<ThresholdError> for ApiError {
    fn from(e: ThresholdError) -> Self {
        match e {
            ThresholdError::UnknownNode(_) => ApiError::new(StatusCode::NOT_FOUND, e),
            ThresholdError::VersionConflict { .. } => ApiError::new(StatusCode::CONFLICT, e),
            ThresholdError::Invalid(ref p) => ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: ErrorBody {
                    error: e.to_string(),
                    violations: p.violations.clone(),
                },
            },
            ThresholdError::Store(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e),
        }
    }
}

impl From<AckError> for ApiError {
    fn from(e: AckError) -> Self {
        let status = match e {
            AckError::UnknownAlert(_) => StatusCode::NOT_FOUND,
            AckError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e)
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(gateway: Gateway, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/nodes", get(list_nodes))
        .route("/nodes/{id}/latest", get(latest))
        .route("/nodes/{id}/history", get(history))
        .route("/nodes/{id}/thresholds", get(get_thresholds).put(put_thresholds))
        .route("/alerts", get(list_alerts))
        .route("/alerts/{id}/ack", post(ack))
        .route("/stream", get(stream))
        .route("/diagnostics", get(diagnostics))
        .with_state(gateway);
    let app = Router::new().nest("/api/v1", api);
    match ui_dir {
        Some(dir) => app.nest_service("/ui", ServeDir::new(dir)),
        None => app,
    }
}

async fn list_nodes(State(gw): State<Gateway>) -> Json<Vec<crate::service::NodeSummary>> {
    Json(gw.nodes())
}

async fn latest(State(gw): State<Gateway>, Path(id): Path<u16>) -> Result<Response, ApiError> {
    match gw.latest(NodeId(id))? {
        Some(record) => Ok(Json(record).into_response()),
        None => Ok(StatusCode::NO_CONTENT.into_response()),
    }
}

#[derive(Debug, Deserialize)]
struct HistoryQuery {
    from: Option<Millis>,
    to: Option<Millis>,
    step: Option<String>,
}

/// Milliseconds, or a number with an `ms`, `s`, `m` or `h` suffix.
pub fn parse_step(text: &str) -> Option<i64> {
    let text = text.trim();
    let split = text.find(|c: char| !c.is_ascii_digit()).unwrap_or(text.len());
    let (digits, unit) = text.split_at(split);
    let n: i64 = digits.parse().ok()?;
    let scale = match unit {
        "" | "ms" => 1,
        "s" => 1_000,
        "m" => 60_000,
        "h" => 3_600_000,
        _ => return None,
    };
    n.checked_mul(scale)
}

async fn history(
    State(gw): State<Gateway>,
    Path(id): Path<u16>,
    Query(q): Query<HistoryQuery>,
) -> Result<Response, ApiError> {
    let step = match q.step.as_deref() {
        None | Some("") => None,
        Some(s) => Some(parse_step(s).ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "invalid step"))?),
    };
    let from = q.from.unwrap_or(0);
    let to = q.to.unwrap_or(Millis::MAX);
    let history = tokio::task::spawn_blocking(move || gw.history(NodeId(id), from, to, step))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e))??;
    Ok(Json(history).into_response())
}

async fn get_thresholds(State(gw): State<Gateway>, Path(id): Path<u16>) -> ApiResult<ThresholdProfile> {
    gw.thresholds(NodeId(id))
        .map(Json)
        .ok_or_else(|| ApiError::from(ThresholdError::UnknownNode(NodeId(id))))
}

#[derive(Debug, Deserialize)]
struct PutQuery {
    expected_version: Option<u64>,
}

async fn put_thresholds(
    State(gw): State<Gateway>,
    Path(id): Path<u16>,
    Query(q): Query<PutQuery>,
    Json(profile): Json<ThresholdProfile>,
) -> ApiResult<ThresholdProfile> {
    Ok(Json(gw.put_thresholds(NodeId(id), profile, q.expected_version)?))
}

#[derive(Debug, Deserialize)]
struct AlertQuery {
    state: Option<AlertStateFilter>,
    node: Option<u16>,
}

async fn list_alerts(State(gw): State<Gateway>, Query(q): Query<AlertQuery>) -> Json<Vec<breathwatch_core::rules::AlertEvent>> {
    Json(gw.alerts(AlertFilter {
        state: q.state,
        node: q.node.map(NodeId),
    }))
}

#[derive(Debug, Deserialize)]
struct AckBody {
    actor: String,
}

async fn ack(
    State(gw): State<Gateway>,
    Path(id): Path<String>,
    Json(body): Json<AckBody>,
) -> ApiResult<breathwatch_core::rules::AlertEvent> {
    Ok(Json(gw.acknowledge(&id, &body.actor)?))
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    node: Option<u16>,
}

/// One JSON event per line for as long as the client keeps up.
async fn stream(State(gw): State<Gateway>, Query(q): Query<StreamQuery>) -> Response {
    let sub = gw.subscribe(q.node.map(NodeId));
    let lines = futures::stream::unfold(sub.events, |mut rx| async move {
        let event = rx.recv().await?;
        let mut line = serde_json::to_vec(&event).expect("events serialize");
        line.push(b'\n');
        Some((Ok::<_, Infallible>(Bytes::from(line)), rx))
    });
    (
        [(header::CONTENT_TYPE, "application/x-ndjson"), (header::CACHE_CONTROL, "no-cache")],
        Body::from_stream(lines),
    )
        .into_response()
}

async fn diagnostics(State(gw): State<Gateway>) -> Json<crate::service::Diagnostics> {
    Json(gw.diagnostics())
}
