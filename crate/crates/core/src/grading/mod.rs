//! The six binary answer-scoring functions and the spec that selects one.
//!
//! Every function returns a [`ScoreResult`] whose score is 0 or 1 together
//! with a short machine-readable explanation. Inputs that cannot be graded
//! at all (a gold answer with no tokens, a prediction with no number when a
//! number is required) are errors rather than silent zeros.

mod functions;
mod spec;

pub use functions::{
    exact_match, extract_first_number, extract_first_object, fuzzy_match, json_match, must_exclude, must_include,
    numerical_match, token_f1, tokenize,
};
pub use spec::{ScoringFunction, ScoringSpec, DEFAULT_EPSILON, DEFAULT_FUZZY_THRESHOLD};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradeError {
    #[error("unknown scoring function `{0}`")]
    UnknownFunction(String),
    #[error("invalid scoring spec: {0}")]
    InvalidSpec(String),
    #[error("gold answer has no tokens")]
    EmptyGold,
    #[error("prediction contains no JSON object")]
    UnparseablePrediction,
    #[error("prediction contains no number")]
    NoNumberFound,
}

impl GradeError {
    /// Stable kebab-case name, used by the grading corpus and the CLI.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::UnknownFunction(_) => "unknown-function",
            Self::InvalidSpec(_) => "invalid-spec",
            Self::EmptyGold => "empty-gold",
            Self::UnparseablePrediction => "unparseable-prediction",
            Self::NoNumberFound => "no-number-found",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScoreResult {
    score: u8,
    pub detail: String,
}

impl ScoreResult {
    pub fn pass(detail: impl Into<String>) -> Self {
        Self { score: 1, detail: detail.into() }
    }

    pub fn fail(detail: impl Into<String>) -> Self {
        Self { score: 0, detail: detail.into() }
    }

    fn from_bool(ok: bool, detail: String) -> Self {
        if ok {
            Self::pass(detail)
        } else {
            Self::fail(detail)
        }
    }

    pub fn score(&self) -> u8 {
        self.score
    }

    pub fn passed(&self) -> bool {
        self.score == 1
    }
}

/// Grades `pred` with the function and parameters named by `spec`.
pub fn grade(spec: &ScoringSpec, pred: &str) -> Result<ScoreResult, GradeError> {
    match spec {
        ScoringSpec::Exact { gold } => Ok(exact_match(pred, gold)),
        ScoringSpec::Fuzzy { gold, threshold } => fuzzy_match(pred, gold, *threshold),
        ScoringSpec::MustInclude { required } => Ok(must_include(pred, required)),
        ScoringSpec::MustExclude { banned } => Ok(must_exclude(pred, banned)),
        ScoringSpec::Json { gold, epsilon } => json_match(pred, gold, *epsilon),
        ScoringSpec::Numerical { gold, epsilon } => numerical_match(pred, *gold, *epsilon),
    }
}
