//! HTTP API over a built [`Pipeline`].

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use xplain_core::pipeline::{run_stage_eval, EvalStage, Pipeline, PipelineError, StoreError, PIPELINE_VERSION};

#[derive(Debug, Deserialize)]
pub struct AskRequest {
    pub question: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::Question(_) => StatusCode::BAD_REQUEST,
            PipelineError::Store(StoreError::NotFound(_)) => StatusCode::NOT_FOUND,
            PipelineError::Store(StoreError::InvalidId(_)) => StatusCode::NOT_FOUND,
            PipelineError::MissingFixture(_) => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        PipelineError::from(e).into()
    }
}

type Shared = Arc<Pipeline>;

/// Runs CPU-bound pipeline work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn ask(State(p): State<Shared>, Json(req): Json<AskRequest>) -> Result<Response, ApiError> {
    let record = blocking(move || Ok(p.ask(&req.question, req.seed)?)).await?;
    Ok(Json(record).into_response())
}

async fn list_runs(State(p): State<Shared>) -> Result<Response, ApiError> {
    let runs = blocking(move || Ok(p.store().list()?)).await?;
    Ok(Json(runs).into_response())
}

async fn show_run(State(p): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let record = blocking(move || Ok(p.store().load(&id)?)).await?;
    Ok(Json(record).into_response())
}

async fn registry(State(p): State<Shared>) -> Response {
    Json(p.registry.clone()).into_response()
}

async fn eval(State(p): State<Shared>, Path(stage): Path<String>) -> Result<Response, ApiError> {
    let stage: EvalStage = stage.parse().map_err(|e| ApiError(StatusCode::NOT_FOUND, e))?;
    let report = blocking(move || Ok(run_stage_eval(&p, stage)?)).await?;
    Ok(Json(report).into_response())
}

async fn health(State(p): State<Shared>) -> Response {
    Json(serde_json::json!({
        "status": "ok",
        "model_kind": p.model.kind,
        "pipeline_version": PIPELINE_VERSION,
    }))
    .into_response()
}

pub fn router(pipeline: Arc<Pipeline>) -> Router {
    Router::new()
        .route("/ask", post(ask))
        .route("/runs", get(list_runs))
        .route("/runs/{id}", get(show_run))
        .route("/registry", get(registry))
        .route("/eval/{stage}", get(eval))
        .route("/health", get(health))
        .with_state(pipeline)
}
