//! JSON HTTP API over an [`Ingestor`].

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::ingest::model::{Cursor, QueryFilter};
use crate::ingest::service::{AlarmError, DispatchError, IngestError, Ingestor, QueryError};
use crate::netlink::TelemetryEnvelope;
use crate::record::TestRequest;
use crate::traffic_light::TrafficLight;

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl ToString) -> Self {
        ApiError {
            status,
            code,
            message: message.to_string(),
        }
    }

    fn bad_request(message: impl ToString) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(message: impl ToString) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn internal(message: impl ToString) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::UnknownDevice(_) => {
                ApiError::new(StatusCode::NOT_FOUND, "unknown_device", e)
            }
            IngestError::SchemaViolation(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "schema_violation", e)
            }
            IngestError::Storage(_) => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_failure", e)
            }
        }
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_range", e)
    }
}

type Shared = Arc<Ingestor>;
type ApiResult = Result<Response, ApiError>;

pub fn router(ingestor: Shared) -> Router {
    Router::new()
        .route("/api/ingest", post(ingest))
        .route("/api/records", get(records))
        .route("/api/records/{id}", get(record))
        .route("/api/records/{id}/spectrum", get(spectrum))
        .route("/api/stats", get(stats))
        .route("/api/devices", get(devices))
        .route("/api/devices/{serial}/rpc/manualTest", post(manual_test))
        .route("/api/alarms", get(alarms))
        .route("/api/alarms/{id}/ack", post(ack_alarm))
        .with_state(ingestor)
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> T + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(ApiError::internal)
}

async fn ingest(
    State(ing): State<Shared>,
    body: Result<Json<TelemetryEnvelope>, axum::extract::rejection::JsonRejection>,
) -> ApiResult {
    let Json(env) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let out = blocking(move || ing.ingest(&env)).await??;
    let status = if out.stored {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    Ok((status, Json(out)).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct RecordParams {
    from: Option<i64>,
    to: Option<i64>,
    device: Option<String>,
    color: Option<String>,
    region: Option<String>,
    cursor: Option<String>,
    limit: Option<usize>,
}

impl RecordParams {
    fn filter(&self) -> Result<QueryFilter, ApiError> {
        let color = self
            .color
            .as_deref()
            .map(str::parse::<TrafficLight>)
            .transpose()
            .map_err(ApiError::bad_request)?;
        Ok(QueryFilter {
            device: self.device.clone(),
            from: self.from,
            to: self.to,
            color,
            region: self.region.clone(),
        })
    }
}

fn params(
    q: Result<Query<RecordParams>, axum::extract::rejection::QueryRejection>,
) -> Result<RecordParams, ApiError> {
    q.map(|Query(p)| p)
        .map_err(|e| ApiError::bad_request(e.body_text()))
}

async fn records(
    State(ing): State<Shared>,
    q: Result<Query<RecordParams>, axum::extract::rejection::QueryRejection>,
) -> ApiResult {
    let p = params(q)?;
    let filter = p.filter()?;
    let cursor = p
        .cursor
        .as_deref()
        .map(str::parse::<Cursor>)
        .transpose()
        .map_err(ApiError::bad_request)?;
    let page = ing.query(&filter, cursor.as_ref(), p.limit)?;
    Ok(Json(page).into_response())
}

async fn stats(
    State(ing): State<Shared>,
    q: Result<Query<RecordParams>, axum::extract::rejection::QueryRejection>,
) -> ApiResult {
    let filter = params(q)?.filter()?;
    Ok(Json(ing.stats(&filter)?).into_response())
}

async fn record(State(ing): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let r = ing
        .record(&id)
        .ok_or_else(|| ApiError::not_found(format!("no record {id}")))?;
    Ok(Json(r).into_response())
}

async fn spectrum(State(ing): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let s = ing
        .spectrum_series(&id)
        .ok_or_else(|| ApiError::not_found(format!("no record {id}")))?;
    Ok(Json(s).into_response())
}

async fn devices(State(ing): State<Shared>) -> ApiResult {
    Ok(Json(ing.devices()).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct ManualTestBody {
    #[serde(default)]
    request: Option<TestRequest>,
}

async fn manual_test(
    State(ing): State<Shared>,
    Path(serial): Path<String>,
    body: Option<Json<ManualTestBody>>,
) -> ApiResult {
    let request = body.and_then(|Json(b)| b.request);
    let dispatch = blocking(move || ing.trigger_manual_test(&serial, request))
        .await?
        .map_err(|e| match e {
            DispatchError::UnknownDevice(_) => {
                ApiError::new(StatusCode::NOT_FOUND, "unknown_device", e)
            }
            DispatchError::LinkUnavailable(_) => {
                ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "link_unavailable", e)
            }
            DispatchError::Storage(_) => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_failure", e)
            }
        })?;
    Ok((StatusCode::ACCEPTED, Json(dispatch)).into_response())
}

async fn alarms(State(ing): State<Shared>) -> ApiResult {
    Ok(Json(ing.alarms()).into_response())
}

async fn ack_alarm(State(ing): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let id: u64 = id
        .parse()
        .map_err(|_| ApiError::bad_request(format!("bad alarm id {id:?}")))?;
    let alarm = blocking(move || ing.ack_alarm(id))
        .await?
        .map_err(|e| match e {
            AlarmError::NotFound(_) => ApiError::not_found(e),
            AlarmError::Storage(_) => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_failure", e)
            }
        })?;
    Ok(Json(alarm).into_response())
}

/// Serves the API until `shutdown` resolves.
pub async fn serve(
    ingestor: Shared,
    addr: SocketAddr,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "api listening");
    axum::serve(listener, router(ingestor))
        .with_graceful_shutdown(shutdown)
        .await
}
