use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde_json::{json, Value};
use tokio::sync::broadcast;

use crate::config::{AgentSection, ConfigError};
use crate::engine::Engine;
use crate::envelope::{classify_domain, TaskEnvelope};
use crate::phase::{Phase, TaskStatusEvent};
use crate::rpc::{self, RpcError, RpcRequest, RpcResponse, SubmitParams, SubmitResult, TaskIdParams};
use crate::store::{StoreError, TaskStore};

pub const AGENT_CARD_PATH: &str = "/.well-known/agent-card.json";
pub const RPC_PATH: &str = "/rpc";
pub const HEALTH_PATH: &str = "/health";
pub const EVENTS_PATH: &str = "/tasks/{id}/events";
pub const PROTOCOL_VERSION: &str = "0.3.0";

/// The card document. Built once at startup; a missing name is a startup
/// error, not an empty field.
pub fn agent_card(agent: &AgentSection) -> Result<Value, ConfigError> {
    if agent.name.trim().is_empty() {
        return Err(ConfigError::Invalid("agent.name is required".into()));
    }
    let mut card = json!({
        "name": agent.name,
        "description": agent.description,
        "version": agent.version,
        "protocolVersion": PROTOCOL_VERSION,
        "capabilities": {"streaming": true, "pushNotifications": false},
        "defaultInputModes": ["application/json"],
        "defaultOutputModes": ["application/json"],
        "endpoints": {"rpc": RPC_PATH, "events": EVENTS_PATH, "health": HEALTH_PATH},
        "skills": [
            {
                "id": "fieldwork",
                "name": "Spatial question answering",
                "description": "Answers questions about a scene from an entity manifest, computing distances, counts and constraint violations before any model call, then grades the answer against the supplied scoring metadata.",
                "tags": ["spatial", "scene-graph", "qa"],
                "inputModes": ["application/json", "application/x-entity-manifest"],
            },
            {
                "id": "mle",
                "name": "ML competition pipeline",
                "description": "Takes a gzip-compressed tar of competition data, audits it for leakage, generates and self-heals a training script, refines it by validation score and returns a submission.",
                "tags": ["ml", "kaggle", "codegen"],
                "inputModes": ["application/gzip"],
            },
        ],
    });
    if let Some(url) = &agent.url {
        card["url"] = json!(format!("{}{RPC_PATH}", url.trim_end_matches('/')));
    }
    Ok(card)
}

pub struct Gateway {
    store: Arc<TaskStore>,
    engine: Arc<Engine>,
    card: Bytes,
    started: Instant,
    draining: AtomicBool,
}

impl Gateway {
    pub fn new(agent: &AgentSection, engine: Engine, store: TaskStore) -> Result<Arc<Self>, ConfigError> {
        let card = serde_json::to_vec(&agent_card(agent)?).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(Arc::new(Self {
            store: Arc::new(store),
            engine: Arc::new(engine),
            card: Bytes::from(card),
            started: Instant::now(),
            draining: AtomicBool::new(false),
        }))
    }

    pub fn store(&self) -> &Arc<TaskStore> {
        &self.store
    }

    /// Stops accepting submissions; in-flight tasks keep running.
    pub fn begin_drain(&self) {
        self.draining.store(true, Ordering::SeqCst);
    }

    pub fn is_draining(&self) -> bool {
        self.draining.load(Ordering::SeqCst)
    }

    pub fn health(&self) -> Value {
        json!({
            "status": if self.is_draining() { "draining" } else { "ok" },
            "uptimeSecs": self.started.elapsed().as_secs_f64(),
            "activeTasks": self.store.active_count(),
            "totalTasks": self.store.len(),
        })
    }

    /// Persists, classifies and dispatches. Must run inside a Tokio runtime;
    /// the handler itself runs on the blocking pool.
    pub fn submit(&self, p: SubmitParams) -> Result<SubmitResult, RpcError> {
        if self.is_draining() {
            return Err(RpcError::new(rpc::SERVER_DRAINING, "server is draining; not accepting tasks"));
        }
        let id = uuid::Uuid::new_v4().to_string();
        let mut env = TaskEnvelope::new(id.clone(), p.goal, p.attachments).map_err(|e| RpcError::new(rpc::INVALID_PARAMS, e.to_string()))?;
        env.client_id = p.id;
        let internal = |e: StoreError| RpcError::new(rpc::INTERNAL_ERROR, e.to_string());
        self.store.create(&env).map_err(internal)?;
        let domain = classify_domain(&env);
        self.store.set_domain(&id, domain).map_err(internal)?;
        self.store.emit(&id, Phase::Classified, domain.name()).map_err(internal)?;

        let (store, engine) = (self.store.clone(), self.engine.clone());
        let client_task_id = env.client_id.clone();
        tokio::task::spawn_blocking(move || engine.run_task(&store, &env, domain));
        Ok(SubmitResult {
            task_id: id,
            client_task_id,
            domain,
            phase: Phase::Classified,
        })
    }

    pub fn dispatch(&self, req: RpcRequest) -> RpcResponse {
        let id = req.id.clone();
        let result = match req.method.as_str() {
            rpc::METHOD_SUBMIT => rpc::params::<SubmitParams>(req.params)
                .and_then(|p| self.submit(p))
                .map(|r| serde_json::to_value(r).expect("submit result serializes")),
            rpc::METHOD_GET => rpc::params::<TaskIdParams>(req.params).and_then(|p| {
                self.store
                    .snapshot(&p.task_id)
                    .map(|s| serde_json::to_value(s).expect("snapshot serializes"))
                    .map_err(store_error)
            }),
            rpc::METHOD_CANCEL => rpc::params::<TaskIdParams>(req.params).and_then(|p| {
                self.store.cancel(&p.task_id).map_err(store_error)?;
                self.store
                    .snapshot(&p.task_id)
                    .map(|s| serde_json::to_value(s).expect("snapshot serializes"))
                    .map_err(store_error)
            }),
            other => Err(RpcError::new(rpc::METHOD_NOT_FOUND, format!("method not found: {other}"))),
        };
        match result {
            Ok(v) => RpcResponse::ok(id, v),
            Err(e) => RpcResponse::err(id, e),
        }
    }
}

fn store_error(e: StoreError) -> RpcError {
    match e {
        StoreError::UnknownTask(_) => RpcError::new(rpc::TASK_NOT_FOUND, e.to_string()),
        StoreError::InvalidTransition { .. } => RpcError::new(rpc::TASK_NOT_CANCELABLE, "task already finished"),
        other => RpcError::new(rpc::INTERNAL_ERROR, other.to_string()),
    }
}

pub fn router(gw: Arc<Gateway>) -> Router {
    Router::new()
        .route(RPC_PATH, post(rpc_handler))
        .route(EVENTS_PATH, get(events_handler))
        .route(AGENT_CARD_PATH, get(card_handler))
        .route(HEALTH_PATH, get(health_handler))
        .with_state(gw)
}

async fn rpc_handler(State(gw): State<Arc<Gateway>>, body: Bytes) -> Json<RpcResponse> {
    match rpc::parse_request(&body) {
        Ok(req) => Json(gw.dispatch(req)),
        Err(resp) => Json(*resp),
    }
}

async fn card_handler(State(gw): State<Arc<Gateway>>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], gw.card.clone()).into_response()
}

async fn health_handler(State(gw): State<Arc<Gateway>>) -> Json<Value> {
    Json(gw.health())
}

struct Tail {
    store: Arc<TaskStore>,
    id: String,
    pending: VecDeque<TaskStatusEvent>,
    rx: broadcast::Receiver<TaskStatusEvent>,
    next_seq: u64,
    done: bool,
}

impl Tail {
    async fn next(&mut self) -> Option<TaskStatusEvent> {
        loop {
            if self.done {
                return None;
            }
            if let Some(ev) = self.pending.pop_front() {
                if ev.seq < self.next_seq {
                    continue;
                }
                self.next_seq = ev.seq + 1;
                self.done = ev.phase.is_terminal();
                return Some(ev);
            }
            match self.rx.recv().await {
                Ok(ev) => self.pending.push_back(ev),
                // the ring buffer overflowed; the store has the full history
                Err(broadcast::error::RecvError::Lagged(_)) => match self.store.events_since(&self.id, self.next_seq) {
                    Ok(evs) => self.pending.extend(evs),
                    Err(_) => return None,
                },
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    }
}

fn sse_event(ev: &TaskStatusEvent) -> Event {
    Event::default()
        .event(ev.phase.name())
        .id(ev.seq.to_string())
        .data(serde_json::to_string(ev).expect("event serializes"))
}

/// Replays every past event, then tails live ones; the stream ends right
/// after the terminal event.
pub fn event_stream(store: Arc<TaskStore>, id: &str) -> Result<impl Stream<Item = Result<Event, Infallible>>, StoreError> {
    let (past, rx) = store.subscribe(id)?;
    let tail = Tail {
        store,
        id: id.to_string(),
        pending: past.into(),
        rx,
        next_seq: 0,
        done: false,
    };
    Ok(futures::stream::unfold(tail, |mut t| async move {
        let ev = t.next().await?;
        Some((Ok(sse_event(&ev)), t))
    }))
}

async fn events_handler(State(gw): State<Arc<Gateway>>, Path(id): Path<String>) -> Response {
    match event_stream(gw.store.clone(), &id) {
        Ok(stream) => Sse::new(stream).keep_alive(KeepAlive::default()).into_response(),
        Err(e) => {
            let body = json!({"error": store_error(e)});
            (StatusCode::NOT_FOUND, Json(body)).into_response()
        }
    }
}
