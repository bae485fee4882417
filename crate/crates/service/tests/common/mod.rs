#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use chatbci_core::data::{DataStore, Session};
use chatbci_core::synth::{generate, SynthSpec};
use chatbci_service::config::{Config, LlmConfig};
use chatbci_service::App;

pub fn knowledge_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../knowledge")
}

/// Two subjects in the IV 2a layout, both sessions, few trials.
pub fn write_subjects(data_root: &Path, trials_per_class: usize) {
    let store = DataStore::new(data_root);
    for (i, sid) in ["A01", "A02"].into_iter().enumerate() {
        for (j, session) in [Session::Train, Session::Eval].into_iter().enumerate() {
            let spec = SynthSpec::iv2a_like(sid, session, trials_per_class, (10 * i + j) as u64);
            store.save(&generate(&spec).unwrap()).unwrap();
        }
    }
}

pub fn action(kind: &str, phase: &str, payload: Value) -> String {
    let block = json!({"kind": kind, "phase": phase, "payload": payload});
    format!("```action\n{block}\n```\n")
}

/// Data, a mock reply table and a config, all under `dir`.
pub fn config_in(dir: &Path, replies: &[(&str, String)]) -> Config {
    write_subjects(&dir.join("data"), 6);
    let entries: Vec<Value> = replies.iter().map(|(p, r)| json!({"prompt": p, "reply": r})).collect();
    let table = dir.join("mock.json");
    std::fs::write(&table, serde_json::to_vec(&json!({"entries": entries})).unwrap()).unwrap();
    Config {
        data_root: dir.join("data"),
        workspace: dir.join("ws"),
        knowledge_dir: knowledge_dir(),
        llm: LlmConfig { mock_table: Some(table), ..LlmConfig::default() },
        logical_clock: true,
        ..Config::default()
    }
}

pub fn app_in(dir: &Path, replies: &[(&str, String)]) -> Arc<App> {
    App::new(config_in(dir, replies)).unwrap()
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: Option<String>,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.bytes)))
    }
}

pub async fn call(router: &Router, method: &str, uri: &str, body: Option<Value>, key: Option<&str>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(k) = key {
        req = req.header("Idempotency-Key", k);
    }
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = router.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let content_type = resp.headers().get("content-type").map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, content_type, bytes }
}

pub async fn raw(router: &Router, method: &str, uri: &str, body: &'static str) -> Reply {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let resp = router.clone().oneshot(req.body(Body::from(body)).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, content_type: None, bytes }
}

/// Poll until `done` holds, at most `tries` times 50 ms apart.
pub async fn poll(router: &Router, uri: &str, tries: usize, done: impl Fn(&Value) -> bool) -> Value {
    for _ in 0..tries {
        let r = call(router, "GET", uri, None, None).await;
        assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.bytes));
        let v = r.json();
        if done(&v) {
            return v;
        }
        tokio::time::sleep(std::time::Duration::from_millis(50)).await;
    }
    panic!("{uri} did not settle");
}

/// Payload for a short training run on the small synthetic subjects.
pub fn tiny_run(subject: &str, epochs: usize) -> Value {
    json!({
        "subject_id": subject,
        "preset": "tiny",
        "train_cfg": {"max_epochs": epochs, "early_stop_patience": epochs},
    })
}
