use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use atlas_core::router::{Backend, BackendAnswer, BackendError, BackendRequest, MockBackend, Tier, TierBackends, TierPolicy};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::BackendSection;

const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

/// Appended to every request so the model reports a confidence we can
/// route on.
const SELF_ASSESSMENT: &str = "Answer the question. On the final line write `CONFIDENCE: <number between 0 and 1>` \
giving your calibrated probability that the answer is correct.";

/// Splits a trailing `CONFIDENCE: x` line off a completion. A missing or
/// out-of-range value yields 0, which escalates rather than trusting an
/// unscored answer.
pub fn split_confidence(text: &str) -> (String, f64) {
    let trimmed = text.trim_end();
    let (body, last) = match trimmed.rsplit_once('\n') {
        Some((b, l)) => (b, l),
        None => ("", trimmed),
    };
    let value = last
        .trim()
        .trim_matches('*')
        .split_once(':')
        .filter(|(k, _)| k.trim().eq_ignore_ascii_case("confidence"))
        .and_then(|(_, v)| v.trim().trim_end_matches('%').parse::<f64>().ok().map(|x| (x, v.contains('%'))));
    match value {
        Some((x, pct)) => {
            let x = if pct { x / 100.0 } else { x };
            let sigma = if (0.0..=1.0).contains(&x) { x } else { 0.0 };
            (body.trim_end().to_string(), sigma)
        }
        None => (trimmed.to_string(), 0.0),
    }
}

/// OpenAI-compatible chat-completions client for one tier. Works with any
/// gateway that speaks that API (LiteLLM proxy, OpenRouter and similar).
pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
    model: String,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: Option<String>, model: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self {
            agent,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
            model: model.into(),
        }
    }

    /// Reads `ATLAS_<TIER>_BASE_URL` and `ATLAS_<TIER>_API_KEY`.
    pub fn from_env(tier: Tier, model: &str, timeout: Duration) -> Self {
        let key = tier.name().to_ascii_uppercase();
        let base = std::env::var(format!("ATLAS_{key}_BASE_URL")).unwrap_or_else(|_| DEFAULT_BASE_URL.into());
        let api_key = std::env::var(format!("ATLAS_{key}_API_KEY")).ok().filter(|k| !k.is_empty());
        Self::new(&base, api_key, model, timeout)
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendAnswer, BackendError> {
        let body = json!({
            "model": self.model,
            "max_tokens": request.max_output_tokens,
            "messages": [
                {"role": "system", "content": SELF_ASSESSMENT},
                {"role": "user", "content": request.prompt},
            ],
        });
        let mut call = self.agent.post(&self.endpoint);
        if let Some(k) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = call.send_json(&body).map_err(|e| BackendError(format!("{}: {e}", self.model)))?;
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError(format!("{}: unreadable response: {e}", self.model)))?;
        let content = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError(format!("{}: response has no message content", self.model)))?;
        let (answer, confidence) = split_confidence(content);
        let tokens = |k: &str| v["usage"][k].as_u64().unwrap_or(0);
        Ok(BackendAnswer::new(answer, confidence).with_tokens(tokens("prompt_tokens"), tokens("completion_tokens")))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    fast: Vec<BackendAnswer>,
    standard: Vec<BackendAnswer>,
    strong: Vec<BackendAnswer>,
}

/// Loads canned per-tier answers: `{"fast": [...], "standard": [...],
/// "strong": [...]}`, each entry `{"answer": "...", "confidence": 0.9}`.
pub fn scripted_backends(path: &Path) -> Result<TierBackends, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let f: ScriptFile = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let mock = |answers: Vec<BackendAnswer>, tier: &str| -> Result<Arc<dyn Backend>, String> {
        Ok(Arc::new(MockBackend::new(answers).map_err(|e| format!("{tier}: {e}"))?))
    };
    Ok(TierBackends::new(mock(f.fast, "fast")?, mock(f.standard, "standard")?, mock(f.strong, "strong")?))
}

pub fn build_backends(section: &BackendSection, policy: &TierPolicy) -> Result<TierBackends, String> {
    match section {
        BackendSection::Scripted { script } => scripted_backends(script),
        BackendSection::Http { request_timeout_secs } => {
            let t = Duration::from_secs(*request_timeout_secs);
            let http = |tier: Tier| -> Arc<dyn Backend> { Arc::new(HttpBackend::from_env(tier, &policy.tiers.get(tier).model, t)) };
            Ok(TierBackends::new(http(Tier::Fast), http(Tier::Standard), http(Tier::Strong)))
        }
    }
}
