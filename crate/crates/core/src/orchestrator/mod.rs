//! ML competition pipeline driver: strategy selection, code generation via
//! a model backend, sandboxed execution with self-healing, a constant
//! fallback submission, and score-driven refinement with rollback.

mod dummy;
mod errors;
mod exec;
mod pipeline;
mod strategy;

pub use dummy::{constant_prediction, make_dummy_submission, mean, mode, WorkspaceLayout};
pub use errors::{classify_error, ErrorClass, ERROR_PATTERNS};
pub use exec::{
    parse_validation_score, Clock, ExecOutcome, Executor, ManualClock, ScriptedExecutor, ScriptedRun, SubprocessExecutor,
    SystemClock, SCRIPT_FILE, SUBMISSION_FILE,
};
pub use pipeline::{
    extract_script, heal_prompt, initial_prompt, refine, refine_observed, refine_prompt, run_pipeline,
    run_pipeline_observed, AttemptRecord, PipelineEvent, PipelineLimits, PipelineState, PipelineTask,
    RefinementRecord, TraceEvent, MAX_HEAL_ITERATIONS, MAX_REFINEMENT_ITERATIONS,
};
pub use strategy::{classify_strategy, infer_direction, CompetitionMetadata, MetricDirection, ProblemKind, StrategyKind};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OrchestratorError {
    #[error("invalid workspace: {0}")]
    WorkspaceInvalid(String),
    #[error("executor unavailable: {0}")]
    ExecutorUnavailable(String),
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
    #[error("no test data to shape a submission")]
    NoTestData,
    #[error("dummy submission: {0}")]
    Dummy(String),
}
