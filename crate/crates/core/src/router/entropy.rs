use serde::{Deserialize, Serialize};

use super::RouterError;

const SUM_TOLERANCE: f64 = 1e-9;

/// Estimated probabilities over candidate answers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnswerDistribution {
    entries: Vec<(String, f64)>,
}

impl AnswerDistribution {
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self, RouterError> {
        let mut seen = std::collections::BTreeSet::new();
        for (answer, p) in &entries {
            if !(p.is_finite() && *p >= 0.0) {
                return Err(RouterError::InvalidDistribution(format!("probability {p} for {answer:?}")));
            }
            if !seen.insert(answer.as_str()) {
                return Err(RouterError::InvalidDistribution(format!("duplicate answer {answer:?}")));
            }
        }
        let total: f64 = entries.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(RouterError::InvalidDistribution(format!("probabilities sum to {total}")));
        }
        Ok(Self { entries })
    }

    pub fn uniform<I, S>(answers: I) -> Result<Self, RouterError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let answers: Vec<String> = answers.into_iter().map(Into::into).collect();
        let p = 1.0 / answers.len() as f64;
        Self::new(answers.into_iter().map(|a| (a, p)).collect())
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }
}

/// Shannon entropy in bits, with `0 * log 0 = 0`.
pub fn answer_entropy(dist: &AnswerDistribution) -> f64 {
    let h: f64 = dist
        .entries
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(_, p)| -p * p.log2())
        .sum();
    // a lone p = 1 gives -0.0
    h.max(0.0)
}

/// A reasoning step the agent could take next, with its estimated
/// reduction in answer entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAction {
    pub id: String,
    pub description: String,
    pub estimated_gain: f64,
}

impl CandidateAction {
    pub fn new(id: impl Into<String>, description: impl Into<String>, estimated_gain: f64) -> Result<Self, RouterError> {
        if !estimated_gain.is_finite() {
            return Err(RouterError::InvalidCandidate(format!("gain {estimated_gain} is not finite")));
        }
        Ok(Self {
            id: id.into(),
            description: description.into(),
            estimated_gain,
        })
    }
}

/// The candidate with the largest estimated gain; equal gains go to the
/// lexicographically smallest id.
pub fn select_action(candidates: &[CandidateAction]) -> Result<&CandidateAction, RouterError> {
    if let Some(bad) = candidates.iter().find(|c| !c.estimated_gain.is_finite()) {
        return Err(RouterError::InvalidCandidate(format!("gain of `{}` is not finite", bad.id)));
    }
    candidates
        .iter()
        .reduce(|best, c| {
            if c.estimated_gain > best.estimated_gain
                || (c.estimated_gain == best.estimated_gain && c.id < best.id)
            {
                c
            } else {
                best
            }
        })
        .ok_or(RouterError::EmptyCandidates)
}
