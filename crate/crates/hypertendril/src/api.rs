// SPDX-License-Identifier: Apache-2.0

//! HTTP surface under `/api/v1`. Handlers are thin wrappers over
//! [`Service`]; blocking store reads run on the blocking pool so long
//! importance fits never stall control requests.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::ProcessConfig;
use crate::query::{versioned, QueryError, RefinementDraft, Service};
use crate::SCHEMA_VERSION;

type Params = Query<HashMap<String, String>>;

pub struct ApiError(QueryError);

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code, invariant) = match &self.0 {
            QueryError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found", None),
            QueryError::Conflict(_) => (StatusCode::CONFLICT, "conflict", None),
            QueryError::Invalid { invariant, .. } => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid", Some(invariant.clone()))
            }
            QueryError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request", None),
            QueryError::Store(_) => (StatusCode::INTERNAL_SERVER_ERROR, "store", None),
        };
        let message = match &self.0 {
            QueryError::Invalid { message, .. } => message.clone(),
            other => other.to_string(),
        };
        let body = json!({
            "schema_version": SCHEMA_VERSION,
            "error": { "code": code, "invariant": invariant, "message": message },
        });
        (status, Json(body)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn ok<T: Serialize>(body: &T) -> ApiResult {
    Ok(Json(versioned(body)).into_response())
}

fn created<T: Serialize>(body: &T) -> ApiResult {
    Ok((StatusCode::CREATED, Json(versioned(body))).into_response())
}

/// Runs a blocking service call on the blocking pool.
async fn blocking<T, F>(svc: &Arc<Service>, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, QueryError> + Send + 'static,
{
    let svc = Arc::clone(svc);
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ApiError(QueryError::BadRequest(format!("request task failed: {e}"))))?
        .map_err(ApiError)
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError(QueryError::BadRequest(format!("invalid body: {e}"))))
}

fn param<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str) -> Result<Option<T>, ApiError> {
    match q.get(key).filter(|v| !v.is_empty()) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| ApiError(QueryError::BadRequest(format!("bad value for `{key}`: {v}")))),
    }
}

fn text(q: &HashMap<String, String>, key: &str) -> Option<String> {
    q.get(key).filter(|v| !v.is_empty()).cloned()
}

#[derive(Deserialize)]
struct NewStudy {
    #[serde(default)]
    name: String,
}

async fn create_study(State(svc): State<Arc<Service>>, body: Bytes) -> ApiResult {
    let req: NewStudy = if body.is_empty() { NewStudy { name: String::new() } } else { parse_body(&body)? };
    let study = blocking(&svc, move |s| s.create_study(&req.name)).await?;
    created(&study)
}

async fn list_studies(State(svc): State<Arc<Service>>) -> ApiResult {
    let studies = blocking(&svc, |s| s.studies()).await?;
    ok(&json!({ "studies": studies }))
}

async fn study_summary(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult {
    ok(&blocking(&svc, move |s| s.summary(&id)).await?)
}

async fn create_process(State(svc): State<Arc<Service>>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let value: Value = parse_body(&body)?;
    let config = ProcessConfig::from_value(&value).map_err(|e| {
        ApiError(QueryError::Invalid {
            invariant: e.path.clone(),
            message: e.message,
        })
    })?;
    let pid = blocking(&svc, move |s| s.create_process(&id, &config)).await?;
    created(&json!({ "process_id": pid, "status": "pending" }))
}

async fn process(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult {
    let (summary, config) = blocking(&svc, move |s| Ok((s.process(&id)?, s.process_config(&id)?))).await?;
    ok(&json!({ "summary": summary, "config": config }))
}

async fn start(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult {
    let svc2 = Arc::clone(&svc);
    let status = tokio::task::spawn_blocking(move || svc2.start(&id))
        .await
        .map_err(|e| ApiError(QueryError::BadRequest(e.to_string())))??;
    ok(&json!({ "status": status }))
}

async fn stop(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult {
    let signalled = blocking(&svc, move |s| s.stop(&id)).await?;
    ok(&json!({ "stop_requested": signalled }))
}

async fn trials(State(svc): State<Arc<Service>>, Path(id): Path<String>, Query(q): Params) -> ApiResult {
    let status = text(&q, "status");
    let limit = param(&q, "limit")?;
    let trials = blocking(&svc, move |s| s.trials(&id, status.as_deref(), limit)).await?;
    ok(&json!({ "trials": trials }))
}

async fn exploration(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult {
    ok(&blocking(&svc, move |s| s.exploration(&id)).await?)
}

async fn peak(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult {
    ok(&blocking(&svc, move |s| s.peak(&id)).await?)
}

async fn importance(State(svc): State<Arc<Service>>, Path(id): Path<String>, Query(q): Params) -> ApiResult {
    let pairs = param::<bool>(&q, "pairs")?.unwrap_or(false);
    let top = param(&q, "top")?;
    let report = blocking(&svc, move |s| s.importance(&id, pairs, top)).await?;
    ok(report.as_ref())
}

async fn marginal(State(svc): State<Arc<Service>>, Path(id): Path<String>, Query(q): Params) -> ApiResult {
    let params = text(&q, "params").ok_or_else(|| ApiError(QueryError::BadRequest("`params` is required".into())))?;
    let resolution = param(&q, "resolution")?;
    let curve = blocking(&svc, move |s| {
        let names: Vec<&str> = params.split(',').map(str::trim).collect();
        s.marginal(&id, &names, resolution)
    })
    .await?;
    ok(&curve)
}

async fn conditional(State(svc): State<Arc<Service>>, Path(id): Path<String>, Query(q): Params) -> ApiResult {
    let brush = text(&q, "brush").ok_or_else(|| ApiError(QueryError::BadRequest("`brush` is required".into())))?;
    let target = text(&q, "target").ok_or_else(|| ApiError(QueryError::BadRequest("`target` is required".into())))?;
    let resolution = param(&q, "resolution")?;
    let curve = blocking(&svc, move |s| {
        let brushes: Vec<&str> = brush.split(',').map(str::trim).collect();
        s.conditional(&id, &brushes, &target, resolution)
    })
    .await?;
    ok(&curve)
}

async fn tradeoff(State(svc): State<Arc<Service>>, Path(id): Path<String>, Query(q): Params) -> ApiResult {
    let x = text(&q, "x").unwrap_or_else(|| "objective".into());
    let y = text(&q, "y").ok_or_else(|| ApiError(QueryError::BadRequest("`y` is required".into())))?;
    let (xdir, ydir) = (text(&q, "xdir"), text(&q, "ydir"));
    ok(&blocking(&svc, move |s| s.tradeoff(&id, &x, &y, xdir.as_deref(), ydir.as_deref())).await?)
}

async fn parallel(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult {
    ok(&blocking(&svc, move |s| s.parallel(&id)).await?)
}

async fn top(State(svc): State<Arc<Service>>, Path(id): Path<String>, Query(q): Params) -> ApiResult {
    let k = param(&q, "k")?.unwrap_or(5);
    let (metric, dir) = (text(&q, "metric"), text(&q, "dir"));
    let rows = blocking(&svc, move |s| s.top_k(&id, k, metric.as_deref(), dir.as_deref())).await?;
    ok(&json!({ "trials": rows }))
}

async fn metrics(State(svc): State<Arc<Service>>, Path(id): Path<String>, Query(q): Params) -> ApiResult {
    let name = text(&q, "name");
    let max_points = param(&q, "max_points")?;
    let smooth = param(&q, "smooth")?;
    ok(&blocking(&svc, move |s| s.metrics(&id, name.as_deref(), max_points, smooth)).await?)
}

async fn refine(State(svc): State<Arc<Service>>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let draft: RefinementDraft = serde_json::from_slice(&body).map_err(|e| {
        ApiError(QueryError::Invalid {
            invariant: "draft".into(),
            message: e.to_string(),
        })
    })?;
    let preview = draft.preview;
    let outcome = blocking(&svc, move |s| s.refine(&id, &draft)).await?;
    if preview {
        ok(&outcome)
    } else {
        created(&outcome)
    }
}

async fn fallback() -> ApiResult {
    Err(ApiError(QueryError::NotFound("no such endpoint".into())))
}

pub fn router(svc: Arc<Service>) -> Router {
    let v1 = Router::new()
        .route("/studies", post(create_study).get(list_studies))
        .route("/studies/{id}/summary", get(study_summary))
        .route("/studies/{id}/processes", post(create_process))
        .route("/studies/{id}/tradeoff", get(tradeoff))
        .route("/studies/{id}/parallel", get(parallel))
        .route("/studies/{id}/top", get(top))
        .route("/studies/{id}/refine", post(refine))
        .route("/processes/{id}", get(process))
        .route("/processes/{id}/start", post(start))
        .route("/processes/{id}/stop", post(stop))
        .route("/processes/{id}/trials", get(trials))
        .route("/processes/{id}/exploration", get(exploration))
        .route("/processes/{id}/peak", get(peak))
        .route("/processes/{id}/importance", get(importance))
        .route("/processes/{id}/marginal", get(marginal))
        .route("/processes/{id}/conditional", get(conditional))
        .route("/trials/{id}/metrics", get(metrics));
    Router::new()
        .nest("/api/v1", v1)
        .fallback(fallback)
        .with_state(svc)
}

/// Serves the API until the process receives Ctrl-C.
pub async fn serve(svc: Arc<Service>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}/api/v1", listener.local_addr()?);
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
