#![allow(dead_code)]

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use atlas_core::leak_audit::LeakRegistry;
use atlas_core::orchestrator::{Executor, ManualClock, PipelineLimits};
use atlas_core::router::{Backend, BackendAnswer, BackendError, BackendRequest, MockBackend, TierBackends, TierPolicy};
use atlas_gateway::{router, Engine, Gateway, TaskStore};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub const MANIFEST: &str = "entities:\n  pallet @ (0, 0) zone=dock\n  pallet @ (3, 4) zone=dock\n  exit @ (0, 1)\n";

pub struct Mocks {
    pub fast: Arc<MockBackend>,
    pub standard: Arc<MockBackend>,
    pub strong: Arc<MockBackend>,
}

impl Mocks {
    pub fn new(fast: Vec<BackendAnswer>, standard: Vec<BackendAnswer>, strong: Vec<BackendAnswer>) -> Self {
        Self {
            fast: Arc::new(MockBackend::new(fast).unwrap()),
            standard: Arc::new(MockBackend::new(standard).unwrap()),
            strong: Arc::new(MockBackend::new(strong).unwrap()),
        }
    }

    pub fn backends(&self) -> TierBackends {
        TierBackends::new(self.fast.clone(), self.standard.clone(), self.strong.clone())
    }

    pub fn calls(&self) -> usize {
        self.fast.call_count() + self.standard.call_count() + self.strong.call_count()
    }
}

/// fast 0.7 escalates, standard 0.5 reflects once, strong 0.9 settles.
pub fn fieldwork_mocks() -> Mocks {
    Mocks::new(
        vec![BackendAnswer::new("2", 0.7)],
        vec![BackendAnswer::new("2", 0.5)],
        vec![BackendAnswer::new("There are 2 pallets.", 0.9)],
    )
}

/// Same code for every tier; the scripted executor decides what happens.
pub fn codegen_mocks() -> Mocks {
    let code = || vec![BackendAnswer::new("```python\nprint('VALIDATION_SCORE: 0.5')\n```", 1.0)];
    Mocks::new(code(), code(), code())
}

/// Blocks every call until `release` is called.
#[derive(Default)]
pub struct GateBackend {
    open: Mutex<bool>,
    cv: Condvar,
}

impl GateBackend {
    pub fn release(&self) {
        *self.open.lock().unwrap() = true;
        self.cv.notify_all();
    }
}

impl Backend for GateBackend {
    fn complete(&self, _: &BackendRequest) -> Result<BackendAnswer, BackendError> {
        let mut open = self.open.lock().unwrap();
        while !*open {
            open = self.cv.wait(open).unwrap();
        }
        Ok(BackendAnswer::new("2", 0.95))
    }
}

pub struct Harness {
    pub gateway: Arc<Gateway>,
    pub app: Router,
    pub workdir: tempfile::TempDir,
}

pub fn harness(backends: TierBackends, executor: Arc<dyn Executor>, clock: Arc<ManualClock>) -> Harness {
    let workdir = tempfile::tempdir().unwrap();
    let engine = Engine {
        backends,
        policy: TierPolicy::default(),
        executor,
        clock,
        limits: PipelineLimits::default(),
        registry: LeakRegistry::builtin().clone(),
        workspace_root: Some(workdir.path().to_path_buf()),
        keep_workspaces: false,
        max_unpacked_bytes: 1 << 20,
    };
    let agent = atlas_gateway::GatewayConfig::default().agent;
    let gateway = Gateway::new(&agent, engine, TaskStore::in_memory()).unwrap();
    Harness {
        app: router(gateway.clone()),
        gateway,
        workdir,
    }
}

pub fn tar_gz(files: &[(&str, &str)]) -> Vec<u8> {
    let enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
    let mut b = tar::Builder::new(enc);
    for (name, body) in files {
        let mut h = tar::Header::new_gnu();
        h.set_size(body.len() as u64);
        h.set_mode(0o644);
        h.set_cksum();
        b.append_data(&mut h, name, body.as_bytes()).unwrap();
    }
    b.into_inner().unwrap().finish().unwrap()
}

pub fn competition_archive() -> Vec<u8> {
    tar_gz(&[
        ("toy/description.md", "# Toy\nBinary classification of rows. Submissions are evaluated on accuracy.\n"),
        ("toy/train.csv", "id,f,target\n1,x,b\n2,y,a\n3,z,b\n"),
        ("toy/test.csv", "id,f\n10,a\n11,b\n12,c\n"),
        ("toy/sample_submission.csv", "id,target\n10,a\n11,a\n12,a\n"),
    ])
}

pub fn b64(bytes: &[u8]) -> String {
    use base64::Engine;
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn fieldwork_params(client_id: &str) -> Value {
    json!({
        "id": client_id,
        "goal": {
            "question": "How many pallets are in the dock zone?",
            "manifest": MANIFEST,
            "scoring": {"function": "numerical_match", "gold": 2},
        },
    })
}

pub fn mle_params() -> Value {
    json!({"attachments": [{"name": "toy.tar.gz", "mediaType": "application/gzip", "data": b64(&competition_archive())}]})
}

pub async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = tokio::time::timeout(Duration::from_secs(20), resp.into_body().collect())
        .await
        .expect("body completes")
        .unwrap()
        .to_bytes();
    (status, body.to_vec())
}

pub async fn rpc_raw(app: &Router, body: impl Into<Body>) -> Value {
    let req = Request::post("/rpc").header("content-type", "application/json").body(body.into()).unwrap();
    let (status, body) = send(app, req).await;
    assert_eq!(status, StatusCode::OK);
    serde_json::from_slice(&body).unwrap()
}

pub async fn rpc(app: &Router, method: &str, params: Value) -> Value {
    rpc_raw(app, json!({"jsonrpc": "2.0", "id": 1, "method": method, "params": params}).to_string()).await
}

pub async fn get_json(app: &Router, path: &str) -> (StatusCode, Value) {
    let (status, body) = send(app, Request::get(path).body(Body::empty()).unwrap()).await;
    (status, serde_json::from_slice(&body).unwrap())
}

/// (event name, data) pairs from a complete SSE body.
pub fn parse_sse(body: &[u8]) -> Vec<(String, Value)> {
    let text = String::from_utf8_lossy(body);
    text.split("\n\n")
        .filter_map(|block| {
            let mut name = None;
            let mut data = String::new();
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("event:") {
                    name = Some(v.trim().to_string());
                } else if let Some(v) = line.strip_prefix("data:") {
                    data.push_str(v.trim_start());
                }
            }
            Some((name?, serde_json::from_str(&data).ok()?))
        })
        .collect()
}

pub async fn events(app: &Router, task_id: &str) -> Vec<(String, Value)> {
    let (status, body) = send(app, Request::get(format!("/tasks/{task_id}/events")).body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    parse_sse(&body)
}

pub async fn wait_terminal(app: &Router, task_id: &str) -> Value {
    for _ in 0..400 {
        let snap = rpc(app, "tasks/get", json!({"taskId": task_id})).await;
        let phase = snap["result"]["phase"].as_str().unwrap_or_default().to_string();
        if phase == "completed" || phase == "failed" {
            return snap["result"].clone();
        }
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
    panic!("task {task_id} never finished");
}
