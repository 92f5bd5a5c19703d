#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use linddun_core::gateway::{MockProvider, ProviderConfig};
use linddun_service::api::router;
use linddun_service::app::App;
use linddun_service::config::ServiceConfig;
use serde_json::Value;
use tower::ServiceExt;

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn fixture_kb() -> PathBuf {
    manifest_dir().join("../core/tests/fixtures/kb")
}

pub fn demo_dir() -> PathBuf {
    manifest_dir().join("tests/fixtures/demo")
}

pub fn demo_script() -> Value {
    serde_json::from_str(&std::fs::read_to_string(demo_dir().join("mock_script.json")).unwrap()).unwrap()
}

pub struct TestApp {
    pub dir: tempfile::TempDir,
    pub app: Arc<App>,
    pub router: Router,
}

pub fn test_app_with(mock: Arc<MockProvider>, tweak: impl FnOnce(&mut ServiceConfig)) -> TestApp {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ServiceConfig {
        sessions_dir: dir.path().to_path_buf(),
        kb_dir: Some(fixture_kb()),
        providers: vec![ProviderConfig::mock("mock")],
        ..ServiceConfig::default()
    };
    tweak(&mut config);
    let app = Arc::new(App::from_config(config, Some(mock)).unwrap());
    let router = router(app.clone());
    TestApp { dir, app, router }
}

pub fn test_app(mock: Arc<MockProvider>) -> TestApp {
    test_app_with(mock, |_| {})
}

pub struct Reply {
    pub status: StatusCode,
    pub text: String,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or_else(|e| panic!("not JSON ({e}): {}", self.text))
    }
}

pub async fn send(router: &Router, method: Method, uri: &str, body: Option<String>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    Reply {
        status,
        text: String::from_utf8(bytes.to_vec()).unwrap(),
    }
}

fn schema_doc() -> &'static Value {
    static DOC: OnceLock<Value> = OnceLock::new();
    DOC.get_or_init(|| {
        let text = std::fs::read_to_string(manifest_dir().join("schemas/responses.json")).unwrap();
        serde_json::from_str(&text).unwrap()
    })
}

/// Validate `value` against the documented schema of `endpoint`.
pub fn assert_schema(endpoint: &str, value: &Value) {
    let doc = schema_doc();
    let mut schema = doc["endpoints"]
        .get(endpoint)
        .unwrap_or_else(|| panic!("no documented schema for {endpoint}"))
        .clone();
    schema["$defs"] = doc["$defs"].clone();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(value).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{endpoint}: {errors:#?}\n{value:#}");
}
