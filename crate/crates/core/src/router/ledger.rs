use std::sync::Mutex;

use serde::Serialize;

use super::policy::{Tier, TierTable};
use super::RouterError;

/// Per-task token budget.
pub const DEFAULT_TOKEN_BUDGET: u64 = 150_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UsageRecord {
    pub tier: Tier,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost: f64,
}

/// Token and cost accounting for one task. Owned by a single episode or
/// pipeline; recorded tokens never exceed the budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostLedger {
    budget: u64,
    #[serde(skip)]
    rates: TierTable,
    records: Vec<UsageRecord>,
    tokens_used: u64,
    total_cost: f64,
}

impl CostLedger {
    pub fn new(budget: u64, rates: TierTable) -> Self {
        Self {
            budget,
            rates,
            records: Vec::new(),
            tokens_used: 0,
            total_cost: 0.0,
        }
    }

    pub fn with_default_budget(rates: TierTable) -> Self {
        Self::new(DEFAULT_TOKEN_BUDGET, rates)
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn tokens_used(&self) -> u64 {
        self.tokens_used
    }

    pub fn remaining(&self) -> u64 {
        self.budget - self.tokens_used
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn records(&self) -> &[UsageRecord] {
        &self.records
    }

    /// Whether a call expected to use `tokens` may start. An exhausted
    /// budget admits nothing, not even an empty call.
    pub fn can_afford(&self, tokens: u64) -> bool {
        self.remaining() > 0 && tokens <= self.remaining()
    }

    /// Appends a usage record and returns its cost. Nothing is written when
    /// the usage does not fit in the remaining budget.
    pub fn record_usage(&mut self, tier: Tier, input_tokens: u64, output_tokens: u64) -> Result<f64, RouterError> {
        let requested = input_tokens.saturating_add(output_tokens);
        if !self.can_afford(requested) {
            return Err(RouterError::BudgetExceeded {
                requested,
                remaining: self.remaining(),
            });
        }
        let cost = self.rates.get(tier).cost(input_tokens, output_tokens);
        self.records.push(UsageRecord {
            tier,
            input_tokens,
            output_tokens,
            cost,
        });
        self.tokens_used += requested;
        self.total_cost += cost;
        Ok(cost)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct UsageTotals {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost: f64,
}

/// Process-wide usage totals, safe to update from concurrent tasks.
#[derive(Debug, Default)]
pub struct AggregateLedger {
    totals: Mutex<UsageTotals>,
}

impl AggregateLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn absorb(&self, ledger: &CostLedger) {
        let mut t = self.totals.lock().unwrap_or_else(|e| e.into_inner());
        for r in ledger.records() {
            t.calls += 1;
            t.input_tokens += r.input_tokens;
            t.output_tokens += r.output_tokens;
            t.cost += r.cost;
        }
    }

    pub fn totals(&self) -> UsageTotals {
        *self.totals.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rates() {
        let mut l = CostLedger::new(2_000_000, TierTable::default());
        assert_eq!(l.record_usage(Tier::Fast, 1_000_000, 0).unwrap(), 0.40);
        let c = l.record_usage(Tier::Standard, 10_000, 2_000).unwrap();
        assert!((c - 0.036).abs() < 1e-12);
        assert_eq!(l.records().len(), 2);
        assert_eq!(l.tokens_used(), 1_012_000);
    }

    #[test]
    fn budget_is_enforced_before_writing() {
        let mut l = CostLedger::with_default_budget(TierTable::default());
        l.record_usage(Tier::Fast, 100_000, 50_000).unwrap();
        assert_eq!(l.remaining(), 0);
        for (i, o) in [(1, 0), (0, 0), (0, 1)] {
            assert_eq!(
                l.record_usage(Tier::Fast, i, o),
                Err(RouterError::BudgetExceeded { requested: i + o, remaining: 0 })
            );
        }
        assert_eq!(l.records().len(), 1);
        assert_eq!(l.tokens_used(), 150_000);
    }

    #[test]
    fn overflow_request_rejected() {
        let mut l = CostLedger::new(10, TierTable::default());
        assert!(l.record_usage(Tier::Strong, u64::MAX, 1).is_err());
        assert!(l.records().is_empty());
    }

    #[test]
    fn aggregate_from_threads() {
        let agg = std::sync::Arc::new(AggregateLedger::new());
        std::thread::scope(|s| {
            for _ in 0..8 {
                let agg = agg.clone();
                s.spawn(move || {
                    let mut l = CostLedger::new(1_000_000, TierTable::default());
                    l.record_usage(Tier::Fast, 1000, 10).unwrap();
                    agg.absorb(&l);
                });
            }
        });
        let t = agg.totals();
        assert_eq!(t.calls, 8);
        assert_eq!(t.input_tokens, 8000);
    }
}
