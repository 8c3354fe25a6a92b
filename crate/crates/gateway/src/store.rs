use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::broadcast;

use crate::envelope::{DomainClass, TaskEnvelope};
use crate::phase::{Phase, TaskStatusEvent};

const CHANNEL_CAPACITY: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("task `{id}` cannot move from {from} to {to}")]
    InvalidTransition { id: String, from: String, to: Phase },
    #[error("task `{0}` already exists")]
    DuplicateTask(String),
    #[error("journal: {0}")]
    Journal(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AttachmentInfo {
    pub name: String,
    pub media_type: String,
    pub size: usize,
}

/// What `tasks/get` returns. Attachment bytes are not retained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskSnapshot {
    pub task_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub client_task_id: Option<String>,
    pub domain: Option<DomainClass>,
    pub phase: Phase,
    pub attachments: Vec<AttachmentInfo>,
    pub events: Vec<TaskStatusEvent>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum JournalRecord {
    Task {
        task_id: String,
        client_task_id: Option<String>,
        attachments: Vec<AttachmentInfo>,
    },
    Domain {
        task_id: String,
        domain: DomainClass,
    },
    Event(TaskStatusEvent),
    Outcome {
        task_id: String,
        result: Option<Value>,
        error: Option<String>,
    },
}

struct TaskState {
    client_task_id: Option<String>,
    domain: Option<DomainClass>,
    attachments: Vec<AttachmentInfo>,
    events: Vec<TaskStatusEvent>,
    result: Option<Value>,
    error: Option<String>,
}

impl TaskState {
    fn phase(&self) -> Option<Phase> {
        self.events.last().map(|e| e.phase)
    }
}

struct TaskEntry {
    state: Mutex<TaskState>,
    tx: broadcast::Sender<TaskStatusEvent>,
    cancel: Arc<AtomicBool>,
}

impl TaskEntry {
    fn new(state: TaskState) -> Self {
        Self {
            state: Mutex::new(state),
            tx: broadcast::channel(CHANNEL_CAPACITY).0,
            cancel: Arc::new(AtomicBool::new(false)),
        }
    }

    fn lock(&self) -> MutexGuard<'_, TaskState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// In-memory task registry. Reads are concurrent; writes to one task are
/// serialized by that task's lock, which is also held while the event goes
/// to the journal and the broadcast channel so every observer sees the same
/// order.
pub struct TaskStore {
    tasks: RwLock<HashMap<String, Arc<TaskEntry>>>,
    journal: Option<Mutex<File>>,
}

impl Default for TaskStore {
    fn default() -> Self {
        Self::in_memory()
    }
}

/// A crash can leave a partial last line; new records must not be glued
/// onto it.
fn ends_mid_line(path: &Path) -> std::io::Result<bool> {
    use std::io::{Read, Seek, SeekFrom};
    let mut f = File::open(path)?;
    if f.metadata()?.len() == 0 {
        return Ok(false);
    }
    f.seek(SeekFrom::End(-1))?;
    let mut last = [0u8; 1];
    f.read_exact(&mut last)?;
    Ok(last[0] != b'\n')
}

impl TaskStore {
    pub fn in_memory() -> Self {
        Self {
            tasks: RwLock::new(HashMap::new()),
            journal: None,
        }
    }

    /// Opens (or creates) an append-only journal and replays it. Tasks that
    /// were still running when the journal ends are failed, since their
    /// workers did not survive the restart.
    pub fn with_journal(path: &Path) -> Result<Self, StoreError> {
        let jerr = |e: std::io::Error| StoreError::Journal(format!("{}: {e}", path.display()));
        let mut tasks: HashMap<String, TaskState> = HashMap::new();
        let mut order: Vec<String> = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(jerr)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(jerr)?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: JournalRecord = match serde_json::from_str(&line) {
                    Ok(r) => r,
                    // a torn final line from a crash mid-write is expected
                    Err(_) => {
                        tracing::warn!(line = n + 1, "skipping unreadable journal line");
                        continue;
                    }
                };
                match record {
                    JournalRecord::Task {
                        task_id,
                        client_task_id,
                        attachments,
                    } => {
                        order.push(task_id.clone());
                        tasks.insert(
                            task_id,
                            TaskState {
                                client_task_id,
                                domain: None,
                                attachments,
                                events: Vec::new(),
                                result: None,
                                error: None,
                            },
                        );
                    }
                    JournalRecord::Domain { task_id, domain } => {
                        if let Some(t) = tasks.get_mut(&task_id) {
                            t.domain = Some(domain);
                        }
                    }
                    JournalRecord::Event(ev) => {
                        if let Some(t) = tasks.get_mut(&ev.task_id) {
                            t.events.push(ev);
                        }
                    }
                    JournalRecord::Outcome { task_id, result, error } => {
                        if let Some(t) = tasks.get_mut(&task_id) {
                            t.result = result;
                            t.error = error;
                        }
                    }
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(jerr)?;
        if ends_mid_line(path).map_err(jerr)? {
            file.write_all(b"\n").map_err(jerr)?;
        }
        let store = Self {
            tasks: RwLock::new(tasks.into_iter().map(|(id, st)| (id, Arc::new(TaskEntry::new(st)))).collect()),
            journal: Some(Mutex::new(file)),
        };
        for id in order {
            let phase = store.entry(&id)?.lock().phase();
            if phase.is_none() {
                store.emit(&id, Phase::Received, "task accepted")?;
            }
            if !phase.is_some_and(Phase::is_terminal) {
                store.fail(&id, "interrupted by a server restart")?;
            }
        }
        Ok(store)
    }

    fn write_journal(&self, record: &JournalRecord) -> Result<(), StoreError> {
        let Some(j) = &self.journal else { return Ok(()) };
        let mut line = serde_json::to_string(record).map_err(|e| StoreError::Journal(e.to_string()))?;
        line.push('\n');
        let mut f = j.lock().unwrap_or_else(|e| e.into_inner());
        f.write_all(line.as_bytes()).map_err(|e| StoreError::Journal(e.to_string()))
    }

    fn entry(&self, id: &str) -> Result<Arc<TaskEntry>, StoreError> {
        self.tasks
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownTask(id.to_string()))
    }

    /// Registers the envelope under its (server-assigned) id and emits
    /// `received`.
    pub fn create(&self, env: &TaskEnvelope) -> Result<TaskStatusEvent, StoreError> {
        let attachments: Vec<AttachmentInfo> = env
            .attachments
            .iter()
            .map(|a| AttachmentInfo {
                name: a.name.clone(),
                media_type: a.media_type.clone(),
                size: a.data.len(),
            })
            .collect();
        let entry = Arc::new(TaskEntry::new(TaskState {
            client_task_id: env.client_id.clone(),
            domain: None,
            attachments: attachments.clone(),
            events: Vec::new(),
            result: None,
            error: None,
        }));
        {
            let mut tasks = self.tasks.write().unwrap_or_else(|e| e.into_inner());
            if tasks.contains_key(&env.id) {
                return Err(StoreError::DuplicateTask(env.id.clone()));
            }
            tasks.insert(env.id.clone(), entry);
        }
        self.write_journal(&JournalRecord::Task {
            task_id: env.id.clone(),
            client_task_id: env.client_id.clone(),
            attachments,
        })?;
        self.emit(&env.id, Phase::Received, "task accepted")
    }

    pub fn set_domain(&self, id: &str, domain: DomainClass) -> Result<(), StoreError> {
        let entry = self.entry(id)?;
        let mut st = entry.lock();
        st.domain = Some(domain);
        self.write_journal(&JournalRecord::Domain {
            task_id: id.to_string(),
            domain,
        })
    }

    fn push_event(&self, id: &str, entry: &TaskEntry, st: &mut TaskState, phase: Phase, detail: String) -> Result<TaskStatusEvent, StoreError> {
        let prev = st.phase();
        if !phase.can_follow(prev) {
            return Err(StoreError::InvalidTransition {
                id: id.to_string(),
                from: prev.map_or("nothing".into(), |p| p.name().to_string()),
                to: phase,
            });
        }
        let ev = TaskStatusEvent {
            task_id: id.to_string(),
            seq: st.events.len() as u64,
            phase,
            timestamp: Utc::now(),
            detail,
        };
        self.write_journal(&JournalRecord::Event(ev.clone()))?;
        st.events.push(ev.clone());
        // no receivers is fine
        let _ = entry.tx.send(ev.clone());
        Ok(ev)
    }

    /// Appends an event if the phase graph allows it.
    pub fn emit(&self, id: &str, phase: Phase, detail: impl Into<String>) -> Result<TaskStatusEvent, StoreError> {
        let entry = self.entry(id)?;
        let mut st = entry.lock();
        self.push_event(id, &entry, &mut st, phase, detail.into())
    }

    fn finish(&self, id: &str, phase: Phase, detail: String, result: Option<Value>, error: Option<String>) -> Result<TaskStatusEvent, StoreError> {
        let entry = self.entry(id)?;
        let mut st = entry.lock();
        if !phase.can_follow(st.phase()) {
            return Err(StoreError::InvalidTransition {
                id: id.to_string(),
                from: st.phase().map_or("nothing".into(), |p| p.name().to_string()),
                to: phase,
            });
        }
        // outcome lands before the terminal event, so anyone who sees the
        // event can already read the result
        self.write_journal(&JournalRecord::Outcome {
            task_id: id.to_string(),
            result: result.clone(),
            error: error.clone(),
        })?;
        st.result = result;
        st.error = error;
        self.push_event(id, &entry, &mut st, phase, detail)
    }

    pub fn complete(&self, id: &str, detail: impl Into<String>, result: Value) -> Result<TaskStatusEvent, StoreError> {
        self.finish(id, Phase::Completed, detail.into(), Some(result), None)
    }

    pub fn fail(&self, id: &str, reason: impl Into<String>) -> Result<TaskStatusEvent, StoreError> {
        let reason = reason.into();
        self.finish(id, Phase::Failed, reason.clone(), None, Some(reason))
    }

    /// Requests cancellation. Workers check the flag between steps; the
    /// task fails right away so clients are not left waiting.
    pub fn cancel(&self, id: &str) -> Result<TaskStatusEvent, StoreError> {
        let entry = self.entry(id)?;
        entry.cancel.store(true, Ordering::SeqCst);
        self.fail(id, "canceled by client")
    }

    pub fn cancel_flag(&self, id: &str) -> Result<Arc<AtomicBool>, StoreError> {
        Ok(self.entry(id)?.cancel.clone())
    }

    pub fn snapshot(&self, id: &str) -> Result<TaskSnapshot, StoreError> {
        let entry = self.entry(id)?;
        let st = entry.lock();
        Ok(TaskSnapshot {
            task_id: id.to_string(),
            client_task_id: st.client_task_id.clone(),
            domain: st.domain,
            phase: st.phase().unwrap_or(Phase::Received),
            attachments: st.attachments.clone(),
            events: st.events.clone(),
            result: st.result.clone(),
            error: st.error.clone(),
        })
    }

    /// Past events plus a receiver for everything after them, taken under
    /// the task lock so nothing falls in between.
    pub fn subscribe(&self, id: &str) -> Result<(Vec<TaskStatusEvent>, broadcast::Receiver<TaskStatusEvent>), StoreError> {
        let entry = self.entry(id)?;
        let st = entry.lock();
        Ok((st.events.clone(), entry.tx.subscribe()))
    }

    /// Events with `seq >= from`, used to catch up after a lagged receiver.
    pub fn events_since(&self, id: &str, from: u64) -> Result<Vec<TaskStatusEvent>, StoreError> {
        let entry = self.entry(id)?;
        let st = entry.lock();
        Ok(st.events.iter().filter(|e| e.seq >= from).cloned().collect())
    }

    pub fn active_count(&self) -> usize {
        self.tasks
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .filter(|e| !e.lock().phase().is_some_and(Phase::is_terminal))
            .count()
    }

    pub fn len(&self) -> usize {
        self.tasks.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::Goal;
    use serde_json::json;

    fn env(id: &str) -> TaskEnvelope {
        TaskEnvelope::new(id, Some(Goal::default()), vec![]).unwrap()
    }

    #[test]
    fn lifecycle_and_transition_guard() {
        let s = TaskStore::in_memory();
        s.create(&env("a")).unwrap();
        assert!(s.create(&env("a")).is_err());
        assert!(s.emit("a", Phase::Processing, "").is_err());
        s.emit("a", Phase::Classified, "fieldwork").unwrap();
        s.emit("a", Phase::Processing, "").unwrap();
        assert_eq!(s.active_count(), 1);
        s.complete("a", "done", json!({"answer": 1})).unwrap();
        assert_eq!(s.active_count(), 0);
        assert!(s.fail("a", "late").is_err());
        assert!(s.cancel("a").is_err());
        let snap = s.snapshot("a").unwrap();
        assert_eq!(snap.phase, Phase::Completed);
        assert_eq!(snap.result, Some(json!({"answer": 1})));
        assert_eq!(snap.events.iter().map(|e| e.seq).collect::<Vec<_>>(), [0, 1, 2, 3]);
        assert!(matches!(s.snapshot("nope"), Err(StoreError::UnknownTask(_))));
    }

    #[test]
    fn subscribe_replays_then_tails() {
        let s = TaskStore::in_memory();
        s.create(&env("a")).unwrap();
        let (past, mut rx) = s.subscribe("a").unwrap();
        assert_eq!(past.len(), 1);
        s.emit("a", Phase::Classified, "").unwrap();
        assert_eq!(rx.try_recv().unwrap().phase, Phase::Classified);
        assert!(rx.try_recv().is_err());
    }

    #[test]
    fn journal_restores_and_fails_interrupted_tasks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        {
            let s = TaskStore::with_journal(&path).unwrap();
            s.create(&env("done")).unwrap();
            s.set_domain("done", DomainClass::Fieldwork).unwrap();
            s.emit("done", Phase::Classified, "").unwrap();
            s.emit("done", Phase::Processing, "").unwrap();
            s.complete("done", "ok", json!(42)).unwrap();
            s.create(&env("running")).unwrap();
            s.emit("running", Phase::Classified, "").unwrap();
        }
        // torn tail line
        std::fs::OpenOptions::new().append(true).open(&path).unwrap().write_all(b"{\"record\":").unwrap();
        let s = TaskStore::with_journal(&path).unwrap();
        let done = s.snapshot("done").unwrap();
        assert_eq!((done.phase, done.result, done.domain), (Phase::Completed, Some(json!(42)), Some(DomainClass::Fieldwork)));
        let r = s.snapshot("running").unwrap();
        assert_eq!(r.phase, Phase::Failed);
        assert_eq!(r.error.as_deref(), Some("interrupted by a server restart"));
        assert_eq!(s.active_count(), 0);
    }
}
