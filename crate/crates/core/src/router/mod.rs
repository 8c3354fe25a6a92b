//! Entropy-guided reasoning across fast, standard and strong model tiers,
//! with per-task token budgets and cost accounting.

mod backend;
mod entropy;
mod episode;
mod ledger;
mod policy;

pub use backend::{Backend, BackendAnswer, BackendError, BackendRequest, MockBackend, TierBackends};
pub use entropy::{answer_entropy, select_action, AnswerDistribution, CandidateAction};
pub use episode::{
    estimate_tokens, reflection_note, render_prompt, run_episode, run_episode_observed, CallTrace, EpisodeEvent,
    EpisodeTask, KnowledgeState, RouterOutcome,
};
pub use ledger::{AggregateLedger, CostLedger, UsageRecord, UsageTotals, DEFAULT_TOKEN_BUDGET};
pub use policy::{should_reflect, Tier, TierPolicy, TierSpec, TierTable};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RouterError {
    #[error("invalid answer distribution: {0}")]
    InvalidDistribution(String),
    #[error("no candidate actions")]
    EmptyCandidates,
    #[error("invalid candidate action: {0}")]
    InvalidCandidate(String),
    #[error("invalid tier policy: {0}")]
    InvalidPolicy(String),
    #[error("token budget exceeded: requested {requested}, remaining {remaining}")]
    BudgetExceeded { requested: u64, remaining: u64 },
    #[error("token budget exhausted before the first call")]
    BudgetExhausted,
    #[error("{tier} backend failed: {message}")]
    Backend { tier: Tier, message: String },
    #[error("mock backend script is empty")]
    EmptyScript,
}
