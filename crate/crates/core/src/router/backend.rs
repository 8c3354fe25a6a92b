use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::policy::Tier;
use super::RouterError;

/// What a tier backend is asked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub tier: Tier,
    pub prompt: String,
    /// Knowledge facts also embedded in `prompt`, for backends that want
    /// them separately.
    pub facts: Vec<String>,
    pub max_output_tokens: u64,
}

/// An answer with its explicitly reported confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendAnswer {
    pub answer: String,
    pub confidence: f64,
    #[serde(default)]
    pub input_tokens: u64,
    #[serde(default)]
    pub output_tokens: u64,
}

impl BackendAnswer {
    pub fn new(answer: impl Into<String>, confidence: f64) -> Self {
        Self {
            answer: answer.into(),
            confidence,
            input_tokens: 0,
            output_tokens: 0,
        }
    }

    pub fn with_tokens(mut self, input_tokens: u64, output_tokens: u64) -> Self {
        self.input_tokens = input_tokens;
        self.output_tokens = output_tokens;
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct BackendError(pub String);

/// A model endpoint for one tier. Transport is up to the implementation.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &BackendRequest) -> Result<BackendAnswer, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn complete(&self, request: &BackendRequest) -> Result<BackendAnswer, BackendError> {
        (**self).complete(request)
    }
}

/// One backend per tier.
#[derive(Clone)]
pub struct TierBackends {
    pub fast: Arc<dyn Backend>,
    pub standard: Arc<dyn Backend>,
    pub strong: Arc<dyn Backend>,
}

impl TierBackends {
    pub fn new(fast: Arc<dyn Backend>, standard: Arc<dyn Backend>, strong: Arc<dyn Backend>) -> Self {
        Self { fast, standard, strong }
    }

    pub fn get(&self, tier: Tier) -> &dyn Backend {
        match tier {
            Tier::Fast => self.fast.as_ref(),
            Tier::Standard => self.standard.as_ref(),
            Tier::Strong => self.strong.as_ref(),
        }
    }
}

/// Scripted backend: plays answers back in order, then repeats the last.
/// Every request is kept for later assertions.
#[derive(Debug)]
pub struct MockBackend {
    script: Vec<BackendAnswer>,
    calls: Mutex<Vec<BackendRequest>>,
}

impl MockBackend {
    pub fn new(script: Vec<BackendAnswer>) -> Result<Self, RouterError> {
        if script.is_empty() {
            return Err(RouterError::EmptyScript);
        }
        Ok(Self {
            script,
            calls: Mutex::new(Vec::new()),
        })
    }

    /// Convenience: answers with the given confidences and no token usage.
    pub fn with_confidences(answer: &str, sigmas: &[f64]) -> Result<Self, RouterError> {
        Self::new(sigmas.iter().map(|&s| BackendAnswer::new(answer, s)).collect())
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn requests(&self) -> Vec<BackendRequest> {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendAnswer, BackendError> {
        let mut calls = self.calls.lock().unwrap_or_else(|e| e.into_inner());
        let i = calls.len().min(self.script.len() - 1);
        calls.push(request.clone());
        Ok(self.script[i].clone())
    }
}
