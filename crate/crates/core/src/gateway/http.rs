// SPDX-License-Identifier: Apache-2.0

//! JSON-over-HTTP API. Handlers delegate to [`Service`] on the blocking
//! pool; errors are `{"error": CODE, "message": ...}` documents.

use std::collections::HashMap;
use std::net::SocketAddr;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::catalog::Registration;
use super::service::{Service, StartupError, Workers};
use super::ApiError;
use crate::ids::ProjectId;
use crate::ingest::PushEvent;
use crate::registry::{PublicationLink, SubmissionMeta};
use crate::report::PolicyMode;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body())).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("request body: {e}")))
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers.get(header::AUTHORIZATION)?.to_str().ok()?.strip_prefix("Bearer ").map(str::trim)
}

fn param<'a>(q: &'a HashMap<String, String>, name: &str) -> ApiResult<&'a str> {
    q.get(name)
        .map(String::as_str)
        .filter(|v| !v.is_empty())
        .ok_or_else(|| ApiError::bad_request(format!("query parameter {name:?} is required")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DependencyHook {
    name: String,
    version: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunRequestBody {
    commit_id: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VenueBody {
    mode: PolicyMode,
    #[serde(default)]
    label: Option<String>,
}

#[derive(Debug, Serialize)]
struct JobsBody {
    jobs: Vec<crate::ingest::Job>,
}

/// Every route of the service.
pub fn router(service: Service) -> Router {
    let limit = service.config().max_model_bytes.saturating_add(1 << 20);
    Router::new()
        .route("/health", get(|| async { Json(serde_json::json!({"status": "ok"})) }))
        .route("/projects", post(register_project).get(list_projects))
        .route("/projects/{id}", get(get_project))
        .route("/projects/{id}/publications", post(link_project))
        .route("/projects/{id}/runs", get(list_runs).post(request_run))
        .route("/projects/{id}/commits/{sha}/run", get(commit_run))
        .route("/projects/{id}/diff", get(diff))
        .route("/projects/{id}/badge", get(badge))
        .route("/projects/{id}/hard-models", get(hard_models))
        .route("/projects/{id}/benchmarks", post(submit_benchmark).get(list_benchmarks))
        .route("/projects/{id}/benchmarks/{bid}", get(get_benchmark).delete(retire_benchmark))
        .route("/projects/{id}/benchmarks/{bid}/history", get(history))
        .route("/projects/{id}/benchmarks/{bid}/first-regression", get(first_regression))
        .route("/projects/{id}/benchmarks/{bid}/publications", post(link_benchmark))
        .route("/projects/{id}/tombstones", get(tombstones))
        .route("/hooks/push", post(push_hook))
        .route("/hooks/dependency", post(dependency_hook))
        .route("/jobs", get(list_jobs))
        .route("/jobs/{id}", get(get_job))
        .route("/venues/{id}", put(set_venue).get(get_venue))
        .route("/venues/{id}/ranking", get(ranking))
        .route("/transcripts/{*path}", get(transcript))
        .layer(DefaultBodyLimit::max(limit as usize))
        .with_state(service)
}

async fn register_project(State(s): State<Service>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: Registration = parse_body(&body)?;
    let project = blocking(move || s.register_project(req)).await?;
    Ok((StatusCode::CREATED, Json(project)))
}

async fn list_projects(State(s): State<Service>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || Ok(s.projects())).await?))
}

async fn get_project(State(s): State<Service>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || s.project(&ProjectId::new(id))).await?))
}

async fn link_project(State(s): State<Service>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let link: PublicationLink = parse_body(&body)?;
    Ok(Json(blocking(move || s.link_project(&ProjectId::new(id), link)).await?))
}

async fn list_runs(State(s): State<Service>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || s.runs(&ProjectId::new(id))).await?))
}

async fn request_run(State(s): State<Service>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: RunRequestBody = parse_body(&body)?;
    let job = blocking(move || s.request_run(&ProjectId::new(id), &req.commit_id)).await?;
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn commit_run(State(s): State<Service>, Path((id, sha)): Path<(String, String)>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || s.run_for_commit(&ProjectId::new(id), &sha)).await?))
}

async fn diff(
    State(s): State<Service>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<impl IntoResponse> {
    let (from, to) = (param(&q, "from")?.to_string(), param(&q, "to")?.to_string());
    Ok(Json(blocking(move || s.diff(&ProjectId::new(id), &from, &to)).await?))
}

async fn badge(
    State(s): State<Service>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<impl IntoResponse> {
    let commit = param(&q, "commit")?.to_string();
    Ok(Json(blocking(move || s.badge(&ProjectId::new(id), &commit)).await?))
}

async fn hard_models(
    State(s): State<Service>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<impl IntoResponse> {
    let commit = q.get("commit").filter(|c| !c.is_empty()).cloned();
    Ok(Json(blocking(move || s.hard_models(&ProjectId::new(id), commit.as_deref())).await?))
}

async fn submit_benchmark(
    State(s): State<Service>,
    Path(id): Path<String>,
    headers: HeaderMap,
    mut multipart: Multipart,
) -> ApiResult<impl IntoResponse> {
    let mut model = None;
    let mut meta = None;
    let multipart_error = |e: axum::extract::multipart::MultipartError| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new("TOO_LARGE", e.body_text())
        } else {
            ApiError::bad_request(format!("multipart: {}", e.body_text()))
        }
    };
    while let Some(field) = multipart.next_field().await.map_err(multipart_error)? {
        match field.name() {
            Some("model") => model = Some(field.bytes().await.map_err(multipart_error)?),
            Some("metadata") => {
                let bytes = field.bytes().await.map_err(multipart_error)?;
                meta = Some(parse_body::<SubmissionMeta>(&bytes)?);
            }
            other => return Err(ApiError::bad_request(format!("unexpected multipart field {other:?}"))),
        }
    }
    // Checked after the body is consumed so clients see the error rather
    // than a reset connection.
    let identity = s.authorize(bearer(&headers))?;
    let model = model.ok_or_else(|| ApiError::bad_request("multipart field \"model\" is required"))?;
    let mut meta = meta.ok_or_else(|| ApiError::bad_request("multipart field \"metadata\" is required"))?;
    if let Some(who) = identity {
        meta.submitter = who;
    }
    let report = blocking(move || s.submit_benchmark(&ProjectId::new(id), meta, &model)).await?;
    Ok((StatusCode::CREATED, Json(report)))
}

async fn list_benchmarks(State(s): State<Service>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || s.benchmarks(&ProjectId::new(id))).await?))
}

async fn get_benchmark(State(s): State<Service>, Path((id, bid)): Path<(String, String)>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || s.benchmark(&ProjectId::new(id), &bid)).await?))
}

async fn retire_benchmark(
    State(s): State<Service>,
    Path((id, bid)): Path<(String, String)>,
    headers: HeaderMap,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<impl IntoResponse> {
    let identity = s.authorize(bearer(&headers))?;
    let reason = param(&q, "reason")?.to_string();
    let actor = match identity {
        Some(who) => who,
        None => param(&q, "actor")?.to_string(),
    };
    Ok(Json(blocking(move || s.retire_benchmark(&ProjectId::new(id), &bid, &reason, &actor)).await?))
}

async fn history(
    State(s): State<Service>,
    Path((id, bid)): Path<(String, String)>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<impl IntoResponse> {
    let alg = param(&q, "alg")?.to_string();
    Ok(Json(blocking(move || s.history(&ProjectId::new(id), &bid, &alg)).await?))
}

async fn first_regression(
    State(s): State<Service>,
    Path((id, bid)): Path<(String, String)>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<impl IntoResponse> {
    let alg = param(&q, "alg")?.to_string();
    Ok(Json(blocking(move || s.first_regression(&ProjectId::new(id), &bid, &alg)).await?))
}

async fn link_benchmark(
    State(s): State<Service>,
    Path((id, bid)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let link: PublicationLink = parse_body(&body)?;
    Ok(Json(blocking(move || s.link_benchmark(&ProjectId::new(id), &bid, link)).await?))
}

async fn tombstones(State(s): State<Service>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || s.tombstones(&ProjectId::new(id))).await?))
}

async fn push_hook(State(s): State<Service>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let event: PushEvent = parse_body(&body).map_err(|e| ApiError::new("BAD_EVENT", e.message))?;
    let job = blocking(move || s.receive_push(event)).await?;
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn dependency_hook(State(s): State<Service>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let hook: DependencyHook = parse_body(&body).map_err(|e| ApiError::new("BAD_EVENT", e.message))?;
    let jobs = blocking(move || s.receive_dependency_update(&hook.name, &hook.version)).await?;
    Ok((StatusCode::ACCEPTED, Json(JobsBody { jobs })))
}

async fn list_jobs(State(s): State<Service>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || Ok(s.jobs())).await?))
}

async fn get_job(State(s): State<Service>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || s.job(&id)).await?))
}

async fn set_venue(State(s): State<Service>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: VenueBody = parse_body(&body)?;
    Ok(Json(blocking(move || s.set_venue(&id, req.mode, req.label)).await?))
}

async fn get_venue(State(s): State<Service>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || s.venue(&id)).await?))
}

async fn ranking(State(s): State<Service>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || s.ranking(&id)).await?))
}

async fn transcript(State(s): State<Service>, Path(path): Path<String>) -> ApiResult<impl IntoResponse> {
    let log_path = format!("transcripts/{path}");
    let bytes = blocking(move || s.transcript(&log_path)).await?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes))
}

/// A bound server with its workers.
pub struct Server {
    addr: SocketAddr,
    service: Service,
    workers: Option<Workers>,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

/// Binds `listen_address`, mounts the API and starts the workers (and the
/// poll loop when `poll` is set).
pub async fn start(service: Service, poll: bool) -> Result<Server, StartupError> {
    let address = service.config().listen_address.clone();
    let listener = tokio::net::TcpListener::bind(&address)
        .await
        .map_err(|source| StartupError::Bind { address: address.clone(), source })?;
    let addr = listener.local_addr().map_err(|source| StartupError::Bind { address, source })?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let app = router(service.clone());
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    let workers = service.spawn_workers(poll);
    tracing::info!(%addr, "listening");
    Ok(Server { addr, service, workers: Some(workers), stop: Some(tx), task })
}

impl Server {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn service(&self) -> &Service {
        &self.service
    }

    /// Stops accepting work, drains HTTP requests, then waits for the
    /// in-flight jobs to finish and be recorded.
    pub async fn shutdown(mut self) {
        self.service.begin_shutdown();
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match (&mut self.task).await {
            Ok(Ok(())) => {}
            Ok(Err(e)) => tracing::error!(error = %e, "http server error"),
            Err(e) => tracing::error!(error = %e, "http task failed"),
        }
        if let Some(workers) = self.workers.take() {
            let _ = tokio::task::spawn_blocking(move || workers.shutdown()).await;
        }
        tracing::info!("shut down");
    }
}
