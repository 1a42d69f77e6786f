use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;
use xplain_core::pipeline::{Pipeline, PipelineConfig};

const LISTING: &str = "How did the model justify predicting Diabetes for a 55-year-old male with a BMI of 18 and a Diabetes Pedigree Function of 0.25?";

fn app(store: &Path) -> Router {
    let mut cfg = PipelineConfig::default();
    cfg.resolve_against(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../..")));
    cfg.store_root = store.to_path_buf();
    xplain::router(Arc::new(Pipeline::build(cfg).unwrap()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn ask_then_browse_runs() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, record) = call(&app, "POST", "/ask", Some(serde_json::json!({ "question": LISTING, "seed": 3 }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(record["explanation_type"], "Rationale");
    assert_eq!(record["seed"], 3);
    let id = record["run_id"].as_str().unwrap().to_string();

    let (status, runs) = call(&app, "GET", "/runs", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(runs.as_array().unwrap().len(), 1);
    assert_eq!(runs[0]["run_id"], id.as_str());

    let (status, loaded) = call(&app, "GET", &format!("/runs/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(loaded, record);
}

#[tokio::test]
async fn contextual_question_is_a_normal_response() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, record) =
        call(&app, "POST", "/ask", Some(serde_json::json!({ "question": "What contextual factors matter here?" }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(record["explanation_type"], "Contextual");
    assert_eq!(record["supported"], false);
    assert_eq!(record["explainer_outputs"], serde_json::json!([]));
}

#[tokio::test]
async fn error_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    assert_eq!(call(&app, "GET", "/runs/unknown-id", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/eval/everything", None).await.0, StatusCode::NOT_FOUND);
    let (status, body) = call(&app, "POST", "/ask", Some(serde_json::json!({ "question": "  " }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("empty"));
    assert!(call(&app, "POST", "/ask", Some(serde_json::json!({ "seed": 1 }))).await.0.is_client_error());
}

#[tokio::test]
async fn registry_health_and_parser_eval() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, health) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["status"], "ok");
    let (status, registry) = call(&app, "GET", "/registry", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(registry["entries"].as_array().unwrap().len(), 6);
    let (status, report) = call(&app, "GET", "/eval/decompose", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["stage"], "decompose");
    assert!(report["n_items"].as_u64().unwrap() >= 100);
}
