use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::RouterError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Fast,
    Standard,
    Strong,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Fast, Tier::Standard, Tier::Strong];

    pub fn name(self) -> &'static str {
        match self {
            Tier::Fast => "fast",
            Tier::Standard => "standard",
            Tier::Strong => "strong",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Tier {
    type Err = RouterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fast" => Ok(Tier::Fast),
            "standard" => Ok(Tier::Standard),
            "strong" => Ok(Tier::Strong),
            other => Err(RouterError::InvalidPolicy(format!("unknown tier `{other}`"))),
        }
    }
}

/// Model and prices for one tier. Rates are currency units per million
/// tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierSpec {
    pub model: String,
    pub input_rate: f64,
    pub output_rate: f64,
}

impl TierSpec {
    pub fn new(model: impl Into<String>, input_rate: f64, output_rate: f64) -> Self {
        Self {
            model: model.into(),
            input_rate,
            output_rate,
        }
    }

    /// `(in * input_rate + out * output_rate) / 1e6`
    pub fn cost(&self, input_tokens: u64, output_tokens: u64) -> f64 {
        (input_tokens as f64 * self.input_rate + output_tokens as f64 * self.output_rate) / 1e6
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierTable {
    pub fast: TierSpec,
    pub standard: TierSpec,
    pub strong: TierSpec,
}

impl Default for TierTable {
    fn default() -> Self {
        Self {
            fast: TierSpec::new("gpt-4.1-mini", 0.40, 1.60),
            standard: TierSpec::new("gpt-4.1", 2.00, 8.00),
            strong: TierSpec::new("anthropic/claude-opus-4-6", 15.00, 75.00),
        }
    }
}

impl TierTable {
    pub fn get(&self, tier: Tier) -> &TierSpec {
        match tier {
            Tier::Fast => &self.fast,
            Tier::Standard => &self.standard,
            Tier::Strong => &self.strong,
        }
    }
}

/// Escalation thresholds and the tier table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TierPolicy {
    /// A fast-tier answer at or above this confidence is returned as is.
    pub accept_fast: f64,
    /// Answers below this confidence trigger a reflection round.
    pub reflect_threshold: f64,
    pub max_reflections: u32,
    /// Output allowance assumed when estimating a call's token cost.
    pub max_output_tokens: u64,
    pub tiers: TierTable,
}

impl Default for TierPolicy {
    fn default() -> Self {
        Self {
            accept_fast: 0.8,
            reflect_threshold: 0.6,
            max_reflections: 2,
            max_output_tokens: 1024,
            tiers: TierTable::default(),
        }
    }
}

impl TierPolicy {
    pub fn validate(&self) -> Result<(), RouterError> {
        let tau = self.reflect_threshold;
        if !(tau > 0.0 && tau <= self.accept_fast && self.accept_fast <= 1.0) {
            return Err(RouterError::InvalidPolicy(format!(
                "need 0 < reflect_threshold ({tau}) <= accept_fast ({}) <= 1",
                self.accept_fast
            )));
        }
        for tier in Tier::ALL {
            let spec = self.tiers.get(tier);
            if !(spec.input_rate >= 0.0 && spec.output_rate >= 0.0 && spec.input_rate.is_finite() && spec.output_rate.is_finite()) {
                return Err(RouterError::InvalidPolicy(format!("negative or non-finite rate for {tier}")));
            }
        }
        Ok(())
    }
}

/// True iff `sigma < tau`.
pub fn should_reflect(sigma: f64, policy: &TierPolicy) -> bool {
    sigma < policy.reflect_threshold
}
