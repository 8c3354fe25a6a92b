use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use atlas_core::grading::grade;
use atlas_core::leak_audit::LeakRegistry;
use atlas_core::orchestrator::{
    refine_observed, run_pipeline_observed, Clock, CompetitionMetadata, Executor, PipelineEvent, PipelineLimits, PipelineState,
    PipelineTask, WorkspaceLayout,
};
use atlas_core::router::{run_episode_observed, CostLedger, EpisodeEvent, EpisodeTask, TierBackends, TierPolicy};
use atlas_core::scene_graph::{build_graph, parse_entity_manifest};
use serde_json::{json, Value};

use crate::archive::extract_tar_gz;
use crate::envelope::{DomainClass, TaskEnvelope};
use crate::phase::Phase;
use crate::store::TaskStore;

/// Submissions larger than this are not inlined in the task result.
pub const MAX_INLINE_SUBMISSION: u64 = 16 << 20;

/// Everything a worker needs. Shared by all tasks; per-task state lives in
/// the worker's stack and its own workspace directory.
pub struct Engine {
    pub backends: TierBackends,
    pub policy: TierPolicy,
    pub executor: Arc<dyn Executor>,
    pub clock: Arc<dyn Clock>,
    pub limits: PipelineLimits,
    pub registry: LeakRegistry,
    pub workspace_root: Option<PathBuf>,
    pub keep_workspaces: bool,
    pub max_unpacked_bytes: u64,
}

struct Progress<'a> {
    store: &'a TaskStore,
    id: &'a str,
    cancel: Arc<AtomicBool>,
}

impl Progress<'_> {
    fn emit(&self, phase: Phase, detail: impl Into<String>) {
        if let Err(e) = self.store.emit(self.id, phase, detail) {
            tracing::debug!(task = self.id, error = %e, "status event dropped");
        }
    }

    fn check(&self) -> Result<(), String> {
        if self.cancel.load(Ordering::SeqCst) {
            Err("canceled by client".into())
        } else {
            Ok(())
        }
    }
}

impl Engine {
    /// Runs one classified task to a terminal phase. Never panics: handler
    /// panics become a failed task.
    pub fn run_task(&self, store: &TaskStore, env: &TaskEnvelope, domain: DomainClass) {
        let id = env.id.as_str();
        let progress = Progress {
            store,
            id,
            cancel: store.cancel_flag(id).unwrap_or_default(),
        };
        let outcome = catch_unwind(AssertUnwindSafe(|| match domain {
            DomainClass::Fieldwork => self.fieldwork(env, &progress),
            DomainClass::Mle => self.mle(env, &progress),
            DomainClass::Unknown => Err(
                "unclassifiable task: expected a gzip-compressed tar attachment or a goal with question text and scoring metadata"
                    .into(),
            ),
        }));
        let done = match outcome {
            Ok(Ok((detail, result))) => store.complete(id, detail, result),
            Ok(Err(reason)) => store.fail(id, reason),
            Err(_) => store.fail(id, "internal error: task handler panicked"),
        };
        if let Err(e) = done {
            // a canceled task is already terminal
            tracing::debug!(task = id, error = %e, "terminal event not recorded");
        }
    }

    fn fieldwork(&self, env: &TaskEnvelope, progress: &Progress<'_>) -> Result<(String, Value), String> {
        let goal = env.goal.as_ref().ok_or("missing goal")?;
        let question = goal.question.clone().ok_or("missing question text")?;
        let spec = goal
            .scoring_spec()
            .ok_or("missing scoring metadata")?
            .map_err(|e| format!("invalid scoring metadata: {e}"))?;

        let sheet = match env.manifest_text() {
            Some(text) => {
                let manifest = parse_entity_manifest(&text).map_err(|e| format!("entity manifest: {e}"))?;
                let mut graph = build_graph(&manifest);
                if let Some(u) = goal.units_per_meter {
                    graph = graph.with_scale(u).map_err(|e| e.to_string())?;
                }
                progress.emit(
                    Phase::Processing,
                    format!("scene graph: {} entities, {} relations", graph.len(), graph.relations().len()),
                );
                Some(graph.to_fact_sheet())
            }
            None => {
                progress.emit(Phase::Processing, "no entity manifest; answering without computed facts");
                None
            }
        };
        progress.check()?;

        let ledger = CostLedger::with_default_budget(self.policy.tiers.clone());
        let mut observer = |ev: &EpisodeEvent| {
            if let EpisodeEvent::Reflecting { round, confidence } = ev {
                progress.emit(Phase::Reflecting, format!("round {round}, confidence {confidence:.3}"));
            }
        };
        let out = run_episode_observed(&EpisodeTask::new(question), &self.backends, sheet.as_ref(), &self.policy, ledger, &mut observer)
            .map_err(|e| format!("reasoning failed: {e}"))?;
        progress.check()?;

        let graded = match grade(&spec, &out.answer) {
            Ok(r) => json!({"score": r.score(), "detail": r.detail}),
            Err(e) => json!({"score": 0, "error": e.kind(), "detail": e.to_string()}),
        };
        let detail = format!("answered via {} call(s), score {}", out.tiers.len(), graded["score"]);
        Ok((
            detail,
            json!({
                "answer": out.answer,
                "confidence": out.confidence,
                "tiers": out.tiers,
                "reflections": out.reflections,
                "budgetExhausted": out.budget_exhausted,
                "tokensUsed": out.ledger.tokens_used(),
                "cost": out.ledger.total_cost(),
                "facts": sheet.map(|s| s.lines).unwrap_or_default(),
                "grade": graded,
            }),
        ))
    }

    fn workspace(&self, id: &str) -> Result<tempfile::TempDir, String> {
        let root = self.workspace_root.clone().unwrap_or_else(std::env::temp_dir);
        std::fs::create_dir_all(&root).map_err(|e| format!("{}: {e}", root.display()))?;
        tempfile::Builder::new()
            .prefix(&format!("atlas-{id}-"))
            .tempdir_in(&root)
            .map_err(|e| format!("workspace: {e}"))
    }

    fn mle(&self, env: &TaskEnvelope, progress: &Progress<'_>) -> Result<(String, Value), String> {
        let archive = env.archive().ok_or("missing dataset archive")?;
        let dir = self.workspace(&env.id)?;
        let data = dir.path().join("data");
        let summary = extract_tar_gz(&archive.data, &data, self.max_unpacked_bytes).map_err(|e| e.to_string())?;
        let layout = WorkspaceLayout::discover(&data).map_err(|e| e.to_string())?;
        let meta = match env.goal.as_ref().and_then(|g| g.competition.clone()) {
            Some(m) => m,
            None => metadata_from_description(&layout, &archive.name),
        };
        let output = dir.path().join("output").join("submission.csv");
        let task = PipelineTask::prepare(meta, &data, output, &self.registry)
            .map_err(|e| e.to_string())?
            .with_trace(dir.path().join("trace.jsonl"));
        progress.emit(
            Phase::Processing,
            format!("extracted {} files ({} bytes); competition `{}`", summary.files, summary.bytes, task.meta.competition_id),
        );
        progress.check()?;

        let mut observer = |ev: PipelineEvent| match ev {
            PipelineEvent::Healing { attempt, class } => progress.emit(Phase::Healing, format!("attempt {attempt} failed ({class}); repairing")),
            PipelineEvent::Refining { iteration } => progress.emit(Phase::Refining, format!("iteration {iteration}")),
            PipelineEvent::Attempt { .. } | PipelineEvent::DummyFallback => {}
        };
        let state = run_pipeline_observed(&task, &self.backends, self.executor.as_ref(), &self.limits, &mut observer)
            .map_err(|e| format!("pipeline: {e}"))?;
        progress.check()?;
        let state = refine_observed(state, &task, &self.backends, self.executor.as_ref(), self.clock.as_ref(), &self.limits, &mut observer)
            .map_err(|e| format!("refinement: {e}"))?;

        let result = mle_result(&task, &state, self.keep_workspaces.then(|| dir.path()));
        if self.keep_workspaces {
            let _ = dir.keep();
        }
        let detail = match (state.used_dummy, state.best_score) {
            (true, _) => "constant fallback submission written".to_string(),
            (false, Some(s)) => format!("submission written, validation score {s}"),
            (false, None) => "submission written".to_string(),
        };
        Ok((detail, result))
    }
}

fn metadata_from_description(layout: &WorkspaceLayout, archive_name: &str) -> CompetitionMetadata {
    let id = archive_name
        .trim_end_matches(".gz")
        .trim_end_matches(".tgz")
        .trim_end_matches(".tar")
        .to_string();
    let text = layout
        .description
        .as_deref()
        .and_then(|p| std::fs::read_to_string(p).ok())
        .unwrap_or_default();
    CompetitionMetadata::from_description(&id, &text)
}

fn mle_result(task: &PipelineTask, state: &PipelineState, kept_dir: Option<&Path>) -> Value {
    let submission = std::fs::metadata(&state.kept_submission)
        .ok()
        .filter(|m| m.len() <= MAX_INLINE_SUBMISSION)
        .and_then(|_| std::fs::read_to_string(&state.kept_submission).ok());
    let attempts: Vec<Value> = state
        .attempts
        .iter()
        .map(|a| {
            json!({
                "index": a.index,
                "exitCode": a.exit_code,
                "timedOut": a.timed_out,
                "errorClass": a.error_class,
                "score": a.score,
                "wallTimeSecs": a.wall_time.as_secs_f64(),
            })
        })
        .collect();
    json!({
        "competitionId": task.meta.competition_id,
        "strategy": state.strategy,
        "direction": task.meta.direction(),
        "attempts": attempts,
        "bestScore": state.best_score,
        "usedDummy": state.used_dummy,
        "refinements": state.refinements,
        "refinementWallTimeSecs": state.refinement_wall_time.as_secs_f64(),
        "submissionCsv": submission,
        "workspace": kept_dir,
    })
}
