#![allow(dead_code)]

use std::path::Path;
use std::process::Command;

use axum::body::Body;
use axum::http::Request;
use axum::Router;
use http_body_util::BodyExt;
use lokrisk::api::{router, AppState, VERSION_HEADER};
use lokrisk::service::Service;
use lokrisk_core::fixtures::demo_bundle;
use lokrisk_core::store::{FileStore, Settings};
use serde_json::{json, Value};
use tower::ServiceExt;

pub struct TestApp {
    pub dir: tempfile::TempDir,
    pub app: Router,
}

pub fn app() -> TestApp {
    let dir = tempfile::tempdir().unwrap();
    let service = Service::new(FileStore::open(dir.path()).unwrap(), Settings::default());
    TestApp {
        app: router(AppState::new(service, 2)),
        dir,
    }
}

pub struct Reply {
    pub status: u16,
    pub body: Value,
    pub version: Option<u64>,
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> Reply {
    call_with(app, method, uri, body, &[]).await
}

pub async fn call_with(app: &Router, method: &str, uri: &str, body: Option<Value>, headers: &[(&str, &str)]) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status().as_u16();
    let version = resp
        .headers()
        .get(VERSION_HEADER)
        .map(|v| v.to_str().unwrap().parse().unwrap());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    Reply { status, body, version }
}

/// Creates workspace `id` and imports the demo bundle into it.
pub async fn demo_workspace(app: &Router, id: &str) {
    let r = call(app, "POST", "/workspaces", Some(json!({ "id": id }))).await;
    assert_eq!(r.status, 201, "{}", r.body);
    let r = call(app, "POST", &format!("/workspaces/{id}/import"), Some(serde_json::to_value(demo_bundle()).unwrap())).await;
    assert_eq!(r.status, 200, "{}", r.body);
}

pub async fn compare(app: &Router, ws: &str, expert: &str, a: &str, rel: &str, b: &str) -> Reply {
    call(
        app,
        "POST",
        &format!("/workspaces/{ws}/experts/{expert}/comparisons"),
        Some(json!({ "a": a, "b": b, "relation": rel })),
    )
    .await
}

/// Output of one CLI invocation.
pub struct Run {
    pub code: i32,
    pub json: Value,
}

pub fn lokrisk(storage: &Path, workspace: &str, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_lokrisk"))
        .args(args)
        .env("LOKRISK_STORAGE", storage)
        .env("LOKRISK_WORKSPACE", workspace)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    let text = String::from_utf8(out.stdout).unwrap();
    let json = serde_json::from_str(&text).unwrap_or_else(|e| panic!("{args:?} printed non-JSON ({e}): {text}"));
    Run {
        code: out.status.code().unwrap_or(-1),
        json,
    }
}
