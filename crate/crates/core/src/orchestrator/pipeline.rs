use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::dummy::{make_dummy_submission, WorkspaceLayout};
use super::errors::{classify_error, ErrorClass};
use super::exec::{parse_validation_score, Clock, ExecOutcome, Executor, SUBMISSION_FILE};
use super::strategy::{classify_strategy, CompetitionMetadata, StrategyKind};
use super::OrchestratorError;
use crate::leak_audit::{run_audit, LeakRegistry, MediaFiles, TabularDataset, Table};
use crate::router::{BackendRequest, Tier, TierBackends};

/// Hard caps: one initial attempt plus three heals, two refinements.
pub const MAX_HEAL_ITERATIONS: u32 = 3;
pub const MAX_REFINEMENT_ITERATIONS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineLimits {
    pub exec_timeout_secs: u64,
    pub max_heal_iterations: u32,
    pub max_refinement_iterations: u32,
    pub refinement_wall_time_secs: u64,
    pub max_output_tokens: u64,
}

impl Default for PipelineLimits {
    fn default() -> Self {
        Self {
            exec_timeout_secs: 300,
            max_heal_iterations: MAX_HEAL_ITERATIONS,
            max_refinement_iterations: MAX_REFINEMENT_ITERATIONS,
            refinement_wall_time_secs: 900,
            max_output_tokens: 8192,
        }
    }
}

impl PipelineLimits {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.exec_timeout_secs == 0 {
            return Err(OrchestratorError::InvalidLimits("exec timeout must be positive".into()));
        }
        if self.max_heal_iterations > MAX_HEAL_ITERATIONS {
            return Err(OrchestratorError::InvalidLimits(format!(
                "at most {MAX_HEAL_ITERATIONS} heal iterations"
            )));
        }
        if self.max_refinement_iterations > MAX_REFINEMENT_ITERATIONS {
            return Err(OrchestratorError::InvalidLimits(format!(
                "at most {MAX_REFINEMENT_ITERATIONS} refinement iterations"
            )));
        }
        Ok(())
    }

    pub fn exec_timeout(&self) -> Duration {
        Duration::from_secs(self.exec_timeout_secs)
    }

    pub fn refinement_wall_time(&self) -> Duration {
        Duration::from_secs(self.refinement_wall_time_secs)
    }
}

/// Everything one pipeline run needs besides its collaborators.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineTask {
    pub meta: CompetitionMetadata,
    pub layout: WorkspaceLayout,
    /// Where the kept submission is copied.
    pub output_path: PathBuf,
    /// Leak audit text prepended to every codegen prompt.
    pub preamble: String,
    pub trace_path: Option<PathBuf>,
}

impl PipelineTask {
    /// Discovers the workspace and runs the leak audit on it.
    pub fn prepare(
        meta: CompetitionMetadata,
        workspace: &Path,
        output_path: PathBuf,
        registry: &LeakRegistry,
    ) -> Result<Self, OrchestratorError> {
        let layout = WorkspaceLayout::discover(workspace)?;
        let load = |p: &Option<PathBuf>| p.as_deref().and_then(|p| Table::from_csv_path(p).ok()).unwrap_or_default();
        let (train, test) = (load(&layout.train), load(&layout.test));
        let target = meta.target_column.clone().filter(|t| train.has_column(t) && !test.has_column(t));
        let data = TabularDataset::new(train, test, target, meta.time_column.clone()).unwrap_or_default();
        let list = |d: &Option<PathBuf>| d.as_deref().and_then(|d| crate::leak_audit::list_files(d).ok()).unwrap_or_default();
        let files = MediaFiles {
            train: list(&layout.train_media),
            test: list(&layout.test_media),
        };
        let report = run_audit(&data, Some(&files), &meta.competition_id, registry);
        Ok(Self {
            meta,
            layout,
            output_path,
            preamble: report.preamble,
            trace_path: None,
        })
    }

    pub fn with_trace(mut self, path: PathBuf) -> Self {
        self.trace_path = Some(path);
        self
    }

    fn workspace(&self) -> &Path {
        &self.layout.root
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttemptRecord {
    /// 1-based; 1 is the initial script, 2..=4 are heals.
    pub index: u32,
    pub script: String,
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub stdout: String,
    pub stderr: String,
    pub wall_time: Duration,
    pub error_class: Option<ErrorClass>,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementRecord {
    pub iteration: u32,
    pub summary: String,
    pub score: Option<f64>,
    pub kept: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum TraceEvent {
    Strategy { kind: StrategyKind },
    Attempt { index: u32, success: bool, error_class: Option<ErrorClass>, score: Option<f64> },
    DummyFallback { path: PathBuf },
    Refinement { iteration: u32, score: Option<f64>, kept: bool, reason: String },
    RefinementHalted { elapsed_secs: f64 },
    Done { best_score: Option<f64>, kept_submission: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineState {
    pub strategy: StrategyKind,
    pub attempts: Vec<AttemptRecord>,
    pub best_score: Option<f64>,
    /// The script behind the kept submission, when a run succeeded.
    pub best_script: Option<String>,
    /// Always set once the pipeline returns.
    pub kept_submission: PathBuf,
    pub used_dummy: bool,
    pub refinements: Vec<RefinementRecord>,
    pub refinement_wall_time: Duration,
    pub trace: Vec<TraceEvent>,
}

impl PipelineState {
    pub fn succeeded(&self) -> bool {
        !self.used_dummy
    }

    pub fn write_trace(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        for e in &self.trace {
            out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            out.push('\n');
        }
        std::fs::write(path, out)
    }
}

/// Progress notifications for callers that stream status.
#[derive(Debug, Clone, PartialEq)]
pub enum PipelineEvent {
    Attempt { index: u32 },
    Healing { attempt: u32, class: ErrorClass },
    DummyFallback,
    Refining { iteration: u32 },
}

/// Pulls the script out of a fenced code block when the model used one.
pub fn extract_script(answer: &str) -> String {
    let Some(start) = answer.find("```") else {
        return answer.trim().to_string() + "\n";
    };
    let body = &answer[start + 3..];
    let body = body.split_once('\n').map_or("", |(_, rest)| rest);
    let end = body.find("```").unwrap_or(body.len());
    body[..end].trim_end().to_string() + "\n"
}

const OUTPUT_CONTRACT: &str = "Requirements: write a complete, self-contained Python script. Read data from the \
current directory, write predictions to `submission.csv` in the same format as the sample submission, and print \
exactly one line `VALIDATION_SCORE: <float>` with the held-out score on the competition metric.";

fn metadata_block(meta: &CompetitionMetadata) -> String {
    let mut s = format!(
        "Competition: {}\nTask type: {}\nMetric: {} ({})\n",
        meta.competition_id,
        meta.task_type,
        meta.metric,
        match meta.direction() {
            super::MetricDirection::Maximize => "higher is better",
            super::MetricDirection::Minimize => "lower is better",
        }
    );
    if !meta.data_format.is_empty() {
        s.push_str(&format!("Data format: {}\n", meta.data_format));
    }
    if let Some(t) = &meta.target_column {
        s.push_str(&format!("Target column: {t}\n"));
    }
    if let Some(t) = &meta.time_column {
        s.push_str(&format!("Time column: {t}\n"));
    }
    for c in &meta.constraints {
        s.push_str(&format!("Constraint: {c}\n"));
    }
    s
}

pub fn initial_prompt(task: &PipelineTask, strategy: StrategyKind) -> String {
    format!(
        "{}\n{}\n{}\n{OUTPUT_CONTRACT}\n",
        task.preamble.trim_end(),
        strategy.template().trim_end(),
        metadata_block(&task.meta)
    )
}

fn tail(text: &str, max: usize) -> &str {
    if text.len() <= max {
        return text;
    }
    let mut start = text.len() - max;
    while !text.is_char_boundary(start) {
        start += 1;
    }
    &text[start..]
}

pub fn heal_prompt(task: &PipelineTask, script: &str, outcome: &ExecOutcome, class: ErrorClass) -> String {
    format!(
        "{}\nThe script below failed ({class}). {}\n\nError context:\n{}\n\nOriginal code:\n```python\n{}```\n\n\
         Return the full script with a minimal patch for this error. {OUTPUT_CONTRACT}\n",
        task.preamble.trim_end(),
        class.advice(),
        tail(outcome.stderr.trim_end(), 4000),
        script
    )
}

pub fn refine_prompt(task: &PipelineTask, script: &str, score: f64) -> String {
    format!(
        "{}\n{}\nThe script below runs and scores {score} on validation. Propose one targeted improvement \
         (for example a stronger model family, K-fold cross-validation, target encoding, feature engineering \
         or stacking). Start the script with a one-line `# change: ...` comment describing it.\n\n\
         Current code:\n```python\n{script}```\n\n{OUTPUT_CONTRACT}\n",
        task.preamble.trim_end(),
        metadata_block(&task.meta)
    )
}

fn change_summary(script: &str) -> String {
    script
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(|l| l.trim_start_matches('#').trim().trim_start_matches("change:").trim())
        .map(|l| l.chars().take(120).collect())
        .unwrap_or_default()
}

fn generate(backends: &TierBackends, tier: Tier, prompt: String, limits: &PipelineLimits) -> Result<String, String> {
    let req = BackendRequest {
        tier,
        prompt,
        facts: Vec::new(),
        max_output_tokens: limits.max_output_tokens,
    };
    backends
        .get(tier)
        .complete(&req)
        .map(|a| extract_script(&a.answer))
        .map_err(|e| e.to_string())
}

fn clear_submission(workspace: &Path) {
    let _ = std::fs::remove_file(workspace.join(SUBMISSION_FILE));
}

fn keep_submission(task: &PipelineTask) -> Result<(), OrchestratorError> {
    let src = task.workspace().join(SUBMISSION_FILE);
    if let Some(dir) = task.output_path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| OrchestratorError::WorkspaceInvalid(e.to_string()))?;
    }
    if src != task.output_path {
        std::fs::copy(&src, &task.output_path)
            .map_err(|e| OrchestratorError::WorkspaceInvalid(format!("{}: {e}", task.output_path.display())))?;
    }
    Ok(())
}

pub fn run_pipeline(
    task: &PipelineTask,
    backends: &TierBackends,
    executor: &dyn Executor,
    limits: &PipelineLimits,
) -> Result<PipelineState, OrchestratorError> {
    run_pipeline_observed(task, backends, executor, limits, &mut |_| {})
}

/// Generate, execute, heal up to the limit, and fall back to a dummy
/// submission when every attempt fails.
pub fn run_pipeline_observed(
    task: &PipelineTask,
    backends: &TierBackends,
    executor: &dyn Executor,
    limits: &PipelineLimits,
    observe: &mut dyn FnMut(PipelineEvent),
) -> Result<PipelineState, OrchestratorError> {
    limits.validate()?;
    if !task.workspace().is_dir() {
        return Err(OrchestratorError::WorkspaceInvalid(format!("{} is not a directory", task.workspace().display())));
    }
    let strategy = classify_strategy(&task.meta);
    let mut state = PipelineState {
        strategy,
        attempts: Vec::new(),
        best_score: None,
        best_script: None,
        kept_submission: task.output_path.clone(),
        used_dummy: false,
        refinements: Vec::new(),
        refinement_wall_time: Duration::ZERO,
        trace: vec![TraceEvent::Strategy { kind: strategy }],
    };

    let max_attempts = 1 + limits.max_heal_iterations;
    let mut prompt = initial_prompt(task, strategy);
    for index in 1..=max_attempts {
        observe(PipelineEvent::Attempt { index });
        clear_submission(task.workspace());
        let (script, outcome) = match generate(backends, Tier::Standard, prompt.clone(), limits) {
            Ok(script) => {
                let outcome = executor.execute(&script, task.workspace(), limits.exec_timeout())?;
                (script, outcome)
            }
            Err(msg) => (
                String::new(),
                ExecOutcome {
                    exit_code: None,
                    stdout: String::new(),
                    stderr: format!("code generation failed: {msg}"),
                    wall_time: Duration::ZERO,
                    timed_out: false,
                },
            ),
        };
        let wrote = task.workspace().join(SUBMISSION_FILE).is_file();
        let success = outcome.succeeded() && wrote;
        let error_class = (!success).then(|| {
            if outcome.timed_out {
                ErrorClass::Timeout
            } else if outcome.succeeded() {
                ErrorClass::Other
            } else {
                classify_error(&outcome.stderr)
            }
        });
        let score = if success { parse_validation_score(&outcome.stdout) } else { None };
        state.trace.push(TraceEvent::Attempt {
            index,
            success,
            error_class,
            score,
        });
        state.attempts.push(AttemptRecord {
            index,
            script: script.clone(),
            exit_code: outcome.exit_code,
            timed_out: outcome.timed_out,
            stdout: outcome.stdout.clone(),
            stderr: outcome.stderr.clone(),
            wall_time: outcome.wall_time,
            error_class,
            score,
        });
        if success {
            keep_submission(task)?;
            state.best_score = score;
            state.best_script = Some(script);
            break;
        }
        let class = error_class.unwrap_or(ErrorClass::Other);
        if index < max_attempts {
            observe(PipelineEvent::Healing { attempt: index, class });
            let mut outcome = outcome;
            if outcome.succeeded() {
                outcome.stderr.push_str("\nThe script exited cleanly but did not write submission.csv.");
            }
            prompt = heal_prompt(task, &script, &outcome, class);
        }
    }

    if state.best_script.is_none() {
        observe(PipelineEvent::DummyFallback);
        make_dummy_submission(&task.meta, &task.layout, &task.output_path)?;
        state.used_dummy = true;
        state.trace.push(TraceEvent::DummyFallback {
            path: task.output_path.clone(),
        });
    }
    finish(task, &mut state);
    Ok(state)
}

fn finish(task: &PipelineTask, state: &mut PipelineState) {
    state.trace.retain(|e| !matches!(e, TraceEvent::Done { .. }));
    state.trace.push(TraceEvent::Done {
        best_score: state.best_score,
        kept_submission: state.kept_submission.clone(),
    });
    if let Some(p) = &task.trace_path {
        let _ = state.write_trace(p);
    }
}

pub fn refine(
    state: PipelineState,
    task: &PipelineTask,
    backends: &TierBackends,
    executor: &dyn Executor,
    clock: &dyn Clock,
    limits: &PipelineLimits,
) -> Result<PipelineState, OrchestratorError> {
    refine_observed(state, task, backends, executor, clock, limits, &mut |_| {})
}

/// Score-driven refinement on the strong tier. Each iteration must strictly
/// beat the best score under the metric direction to replace the kept
/// submission; anything else is recorded and discarded.
pub fn refine_observed(
    mut state: PipelineState,
    task: &PipelineTask,
    backends: &TierBackends,
    executor: &dyn Executor,
    clock: &dyn Clock,
    limits: &PipelineLimits,
    observe: &mut dyn FnMut(PipelineEvent),
) -> Result<PipelineState, OrchestratorError> {
    limits.validate()?;
    let (Some(mut best), Some(mut best_script)) = (state.best_score, state.best_script.clone()) else {
        return Ok(state);
    };
    let direction = task.meta.direction();
    let budget = limits.refinement_wall_time();
    let start = clock.now();

    for iteration in 1..=limits.max_refinement_iterations {
        let elapsed = clock.now().saturating_sub(start);
        if elapsed >= budget {
            state.trace.push(TraceEvent::RefinementHalted {
                elapsed_secs: elapsed.as_secs_f64(),
            });
            break;
        }
        observe(PipelineEvent::Refining { iteration });
        clear_submission(task.workspace());
        let timeout = limits.exec_timeout().min(budget - elapsed);

        let record = match generate(backends, Tier::Strong, refine_prompt(task, &best_script, best), limits) {
            Err(msg) => RefinementRecord {
                iteration,
                summary: String::new(),
                score: None,
                kept: false,
                reason: format!("code generation failed: {msg}"),
            },
            Ok(script) => {
                let outcome = executor.execute(&script, task.workspace(), timeout)?;
                let summary = change_summary(&script);
                let wrote = task.workspace().join(SUBMISSION_FILE).is_file();
                let score = if outcome.succeeded() { parse_validation_score(&outcome.stdout) } else { None };
                let (kept, reason) = match score {
                    _ if !outcome.succeeded() => (false, "run failed".to_string()),
                    _ if !wrote => (false, "no submission written".to_string()),
                    None => (false, "no validation score printed".to_string()),
                    Some(s) if direction.improves(s, best) => (true, format!("improved {best} -> {s}")),
                    Some(s) => (false, format!("did not improve on {best} (got {s})")),
                };
                if kept {
                    keep_submission(task)?;
                    best = score.expect("kept implies a score");
                    best_script = script;
                }
                RefinementRecord {
                    iteration,
                    summary,
                    score,
                    kept,
                    reason,
                }
            }
        };
        state.trace.push(TraceEvent::Refinement {
            iteration,
            score: record.score,
            kept: record.kept,
            reason: record.reason.clone(),
        });
        state.refinements.push(record);
    }

    state.best_score = Some(best);
    state.best_script = Some(best_script);
    state.refinement_wall_time = clock.now().saturating_sub(start);
    finish(task, &mut state);
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn script_extraction() {
        assert_eq!(extract_script("print(1)"), "print(1)\n");
        assert_eq!(extract_script("Here:\n```python\nprint(1)\n```\nbye"), "print(1)\n");
        assert_eq!(extract_script("```\nx=1\n"), "x=1\n");
    }

    #[test]
    fn summaries() {
        assert_eq!(change_summary("# change: 5-fold CV\nimport x"), "5-fold CV");
        assert_eq!(change_summary("\n\nimport x"), "import x");
        assert_eq!(change_summary(""), "");
    }

    #[test]
    fn limits_are_capped() {
        assert!(PipelineLimits::default().validate().is_ok());
        let mut l = PipelineLimits {
            max_heal_iterations: 4,
            ..PipelineLimits::default()
        };
        assert!(l.validate().is_err());
        l.max_heal_iterations = 0;
        l.max_refinement_iterations = 3;
        assert!(l.validate().is_err());
    }

    #[test]
    fn tail_respects_char_boundaries() {
        assert_eq!(tail("héllo", 4), "llo");
        assert_eq!(tail("abc", 10), "abc");
    }
}
