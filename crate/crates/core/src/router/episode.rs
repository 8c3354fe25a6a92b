//! The escalation loop: fast tier first, scene facts plus the standard tier
//! if the fast answer is not confident enough, then bounded reflection
//! rounds on the strong tier.

use serde::Serialize;

use super::backend::{BackendAnswer, BackendRequest, TierBackends};
use super::ledger::CostLedger;
use super::policy::{should_reflect, Tier, TierPolicy};
use super::RouterError;
use crate::scene_graph::FactSheet;

/// What the agent knows at step `t`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct KnowledgeState {
    pub observations: Vec<String>,
    pub computed_facts: Option<FactSheet>,
    pub intermediate: Vec<String>,
    pub step: u32,
}

impl KnowledgeState {
    pub fn new(observations: Vec<String>) -> Self {
        Self {
            observations,
            ..Self::default()
        }
    }

    pub fn with_facts(&self, facts: Option<&FactSheet>) -> Self {
        let mut next = self.clone();
        if let Some(f) = facts {
            next.computed_facts = Some(f.clone());
        }
        next.step += 1;
        next
    }

    pub fn with_note(&self, note: String) -> Self {
        let mut next = self.clone();
        next.intermediate.push(note);
        next.step += 1;
        next
    }

    /// Observations, then fact-sheet lines, then notes.
    pub fn facts(&self) -> Vec<String> {
        let mut out = self.observations.clone();
        if let Some(sheet) = &self.computed_facts {
            out.extend(sheet.lines.iter().cloned());
        }
        out.extend(self.intermediate.iter().cloned());
        out
    }
}

/// The question an episode answers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeTask {
    pub question: String,
}

impl EpisodeTask {
    pub fn new(question: impl Into<String>) -> Self {
        Self { question: question.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CallTrace {
    pub tier: Tier,
    pub answer: String,
    pub confidence: f64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RouterOutcome {
    pub answer: String,
    pub confidence: f64,
    pub tiers: Vec<Tier>,
    pub reflections: u32,
    /// Set when the episode stopped early because the next call did not fit
    /// in the token budget.
    pub budget_exhausted: bool,
    pub calls: Vec<CallTrace>,
    pub ledger: CostLedger,
}

/// Progress notifications from inside an episode.
#[derive(Debug, Clone, PartialEq)]
pub enum EpisodeEvent {
    Called { tier: Tier, confidence: f64 },
    Reflecting { round: u32, confidence: f64 },
}

pub fn render_prompt(task: &EpisodeTask, knowledge: &KnowledgeState) -> String {
    let mut p = format!("Question: {}\n", task.question);
    if !knowledge.observations.is_empty() {
        p.push_str("\nObservations:\n");
        for o in &knowledge.observations {
            p.push_str(&format!("- {o}\n"));
        }
    }
    if let Some(sheet) = &knowledge.computed_facts {
        p.push_str("\nComputed scene facts (authoritative):\n");
        p.push_str(&sheet.render());
    }
    if !knowledge.intermediate.is_empty() {
        p.push_str("\nNotes:\n");
        for n in &knowledge.intermediate {
            p.push_str(&format!("- {n}\n"));
        }
    }
    p.push_str("\nAnswer the question and report your confidence in [0, 1].\n");
    p
}

pub fn reflection_note(round: u32, answer: &str, confidence: f64, threshold: f64) -> String {
    format!(
        "reflection {round}: the previous answer {answer:?} had confidence {confidence:.2}, below {threshold:.2}; \
         re-check it against the computed facts and revise if they disagree"
    )
}

/// Rough token count for a prompt: one token per four bytes, rounded up.
pub fn estimate_tokens(prompt: &str) -> u64 {
    (prompt.len() as u64).div_ceil(4)
}

struct Episode<'a> {
    task: &'a EpisodeTask,
    backends: &'a TierBackends,
    policy: &'a TierPolicy,
    ledger: CostLedger,
    tiers: Vec<Tier>,
    calls: Vec<CallTrace>,
}

enum CallResult {
    Answered(BackendAnswer),
    OutOfBudget,
}

impl Episode<'_> {
    fn call(&mut self, tier: Tier, knowledge: &KnowledgeState) -> Result<CallResult, RouterError> {
        let prompt = render_prompt(self.task, knowledge);
        let estimate = estimate_tokens(&prompt) + self.policy.max_output_tokens;
        if !self.ledger.can_afford(estimate) {
            return Ok(CallResult::OutOfBudget);
        }
        let request = BackendRequest {
            tier,
            prompt,
            facts: knowledge.facts(),
            max_output_tokens: self.policy.max_output_tokens,
        };
        let answer = self
            .backends
            .get(tier)
            .complete(&request)
            .map_err(|e| RouterError::Backend { tier, message: e.0 })?;
        if !(0.0..=1.0).contains(&answer.confidence) {
            return Err(RouterError::Backend {
                tier,
                message: format!("confidence {} outside [0, 1]", answer.confidence),
            });
        }
        let cost = match self.ledger.record_usage(tier, answer.input_tokens, answer.output_tokens) {
            Ok(cost) => cost,
            // the call overran its estimate and the remaining budget; drop it
            Err(RouterError::BudgetExceeded { .. }) => return Ok(CallResult::OutOfBudget),
            Err(e) => return Err(e),
        };
        self.tiers.push(tier);
        self.calls.push(CallTrace {
            tier,
            answer: answer.answer.clone(),
            confidence: answer.confidence,
            input_tokens: answer.input_tokens,
            output_tokens: answer.output_tokens,
            cost,
        });
        Ok(CallResult::Answered(answer))
    }

    fn finish(self, best: BackendAnswer, reflections: u32, budget_exhausted: bool) -> RouterOutcome {
        RouterOutcome {
            answer: best.answer,
            confidence: best.confidence,
            tiers: self.tiers,
            reflections,
            budget_exhausted,
            calls: self.calls,
            ledger: self.ledger,
        }
    }
}

pub fn run_episode(
    task: &EpisodeTask,
    backends: &TierBackends,
    scene_facts: Option<&FactSheet>,
    policy: &TierPolicy,
    ledger: CostLedger,
) -> Result<RouterOutcome, RouterError> {
    run_episode_observed(task, backends, scene_facts, policy, ledger, &mut |_| {})
}

/// Runs one episode. The latest answer wins; a reflection round replaces
/// the answer even when the new confidence is not higher.
pub fn run_episode_observed(
    task: &EpisodeTask,
    backends: &TierBackends,
    scene_facts: Option<&FactSheet>,
    policy: &TierPolicy,
    ledger: CostLedger,
    observer: &mut dyn FnMut(&EpisodeEvent),
) -> Result<RouterOutcome, RouterError> {
    policy.validate()?;
    let mut ep = Episode {
        task,
        backends,
        policy,
        ledger,
        tiers: Vec::new(),
        calls: Vec::new(),
    };

    let k0 = KnowledgeState::new(vec![task.question.clone()]);
    let fast = match ep.call(Tier::Fast, &k0)? {
        CallResult::Answered(a) => a,
        CallResult::OutOfBudget => return Err(RouterError::BudgetExhausted),
    };
    observer(&EpisodeEvent::Called { tier: Tier::Fast, confidence: fast.confidence });
    if fast.confidence >= policy.accept_fast {
        return Ok(ep.finish(fast, 0, false));
    }

    let mut knowledge = k0.with_facts(scene_facts);
    let mut current = match ep.call(Tier::Standard, &knowledge)? {
        CallResult::Answered(a) => a,
        CallResult::OutOfBudget => return Ok(ep.finish(fast, 0, true)),
    };
    observer(&EpisodeEvent::Called { tier: Tier::Standard, confidence: current.confidence });

    let mut reflections = 0;
    for round in 1..=policy.max_reflections {
        if !should_reflect(current.confidence, policy) {
            break;
        }
        observer(&EpisodeEvent::Reflecting { round, confidence: current.confidence });
        knowledge = knowledge.with_note(reflection_note(
            round,
            &current.answer,
            current.confidence,
            policy.reflect_threshold,
        ));
        match ep.call(Tier::Strong, &knowledge)? {
            CallResult::Answered(a) => {
                reflections = round;
                current = a;
                observer(&EpisodeEvent::Called { tier: Tier::Strong, confidence: current.confidence });
            }
            CallResult::OutOfBudget => return Ok(ep.finish(current, reflections, true)),
        }
    }
    Ok(ep.finish(current, reflections, false))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::router::{Backend, BackendError, MockBackend, TierTable};

    fn backends(fast: &[f64], standard: &[f64], strong: &[f64]) -> (TierBackends, [Arc<MockBackend>; 3]) {
        let f = Arc::new(MockBackend::with_confidences("fast", fast).unwrap());
        let s = Arc::new(MockBackend::with_confidences("standard", standard).unwrap());
        let x = Arc::new(MockBackend::with_confidences("strong", strong).unwrap());
        (TierBackends::new(f.clone(), s.clone(), x.clone()), [f, s, x])
    }

    fn run(fast: &[f64], standard: &[f64], strong: &[f64]) -> RouterOutcome {
        let (b, _) = backends(fast, standard, strong);
        let policy = TierPolicy::default();
        let ledger = CostLedger::with_default_budget(TierTable::default());
        run_episode(&EpisodeTask::new("how many pallets?"), &b, None, &policy, ledger).unwrap()
    }

    #[test]
    fn confident_fast_answer_returns_immediately() {
        let o = run(&[0.85], &[0.9], &[0.9]);
        assert_eq!(o.tiers, [Tier::Fast]);
        assert_eq!(o.reflections, 0);
        assert_eq!(o.answer, "fast");
    }

    #[test]
    fn moderate_standard_answer_accepted() {
        let o = run(&[0.5], &[0.7], &[0.9]);
        assert_eq!(o.tiers, [Tier::Fast, Tier::Standard]);
        assert_eq!(o.reflections, 0);
        assert_eq!(o.answer, "standard");
    }

    #[test]
    fn two_reflections_then_last_answer() {
        let o = run(&[0.5], &[0.5], &[0.5, 0.5]);
        assert_eq!(o.tiers, [Tier::Fast, Tier::Standard, Tier::Strong, Tier::Strong]);
        assert_eq!(o.reflections, 2);
        assert_eq!(o.answer, "strong");
    }

    #[test]
    fn boundaries() {
        assert_eq!(run(&[0.8], &[0.0], &[0.0]).tiers.len(), 1);
        assert_eq!(run(&[0.79], &[0.6], &[0.0]).tiers.len(), 2);
        assert_eq!(run(&[0.79], &[0.59], &[0.6]).tiers.len(), 3);
    }

    #[test]
    fn scene_facts_reach_the_standard_tier_only() {
        let graph = crate::scene_graph::build_graph(
            &crate::scene_graph::parse_entity_manifest("entities:\n pallet @ (0,0)\n exit @ (3,4)\n").unwrap(),
        );
        let sheet = graph.to_fact_sheet();
        let (b, [f, s, x]) = backends(&[0.5], &[0.5], &[0.9]);
        let o = run_episode(
            &EpisodeTask::new("q"),
            &b,
            Some(&sheet),
            &TierPolicy::default(),
            CostLedger::with_default_budget(TierTable::default()),
        )
        .unwrap();
        assert_eq!(o.reflections, 1);
        assert!(!f.requests()[0].prompt.contains("distance exit-1"));
        assert!(s.requests()[0].prompt.contains("distance exit-1 -- pallet-1: 5.0"));
        let strong_prompt = &x.requests()[0].prompt;
        assert!(strong_prompt.contains("reflection 1"));
        assert!(strong_prompt.contains("\"standard\""));
    }

    #[test]
    fn budget_stops_escalation_with_best_answer() {
        let f = Arc::new(MockBackend::new(vec![BackendAnswer::new("a", 0.1).with_tokens(500, 100)]).unwrap());
        let s = Arc::new(MockBackend::with_confidences("b", &[0.1]).unwrap());
        let b = TierBackends::new(f, s.clone(), s.clone());
        // room for the fast call only: 600 tokens left < prompt + 1024 output allowance
        let ledger = CostLedger::new(1200, TierTable::default());
        let o = run_episode(&EpisodeTask::new("q"), &b, None, &TierPolicy::default(), ledger).unwrap();
        assert!(o.budget_exhausted);
        assert_eq!(o.tiers, [Tier::Fast]);
        assert_eq!(o.answer, "a");
        assert_eq!(s.call_count(), 0);

        let (b, _) = backends(&[0.1], &[0.1], &[0.1]);
        let err = run_episode(&EpisodeTask::new("q"), &b, None, &TierPolicy::default(), CostLedger::new(10, TierTable::default()));
        assert_eq!(err.unwrap_err(), RouterError::BudgetExhausted);
    }

    #[test]
    fn usage_recorded_per_call() {
        let f = Arc::new(MockBackend::new(vec![BackendAnswer::new("a", 0.5).with_tokens(1000, 100)]).unwrap());
        let s = Arc::new(MockBackend::new(vec![BackendAnswer::new("b", 0.7).with_tokens(2000, 200)]).unwrap());
        let b = TierBackends::new(f, s.clone(), s);
        let o = run_episode(
            &EpisodeTask::new("q"),
            &b,
            None,
            &TierPolicy::default(),
            CostLedger::with_default_budget(TierTable::default()),
        )
        .unwrap();
        assert_eq!(o.ledger.tokens_used(), 3300);
        assert_eq!(o.calls.len(), 2);
        let sum: f64 = o.ledger.records().iter().map(|r| r.cost).sum();
        assert_eq!(sum, o.ledger.total_cost());
    }

    struct Broken;
    impl Backend for Broken {
        fn complete(&self, _: &BackendRequest) -> Result<BackendAnswer, BackendError> {
            Err(BackendError("connection reset".into()))
        }
    }

    #[test]
    fn backend_failure_carries_tier() {
        let ok = Arc::new(MockBackend::with_confidences("a", &[0.1]).unwrap());
        let b = TierBackends::new(ok.clone(), Arc::new(Broken), ok);
        let err = run_episode(
            &EpisodeTask::new("q"),
            &b,
            None,
            &TierPolicy::default(),
            CostLedger::with_default_budget(TierTable::default()),
        )
        .unwrap_err();
        assert_eq!(err, RouterError::Backend { tier: Tier::Standard, message: "connection reset".into() });
    }

    #[test]
    fn out_of_range_confidence_is_a_backend_failure() {
        let (b, _) = backends(&[1.5], &[0.5], &[0.5]);
        let err = run_episode(
            &EpisodeTask::new("q"),
            &b,
            None,
            &TierPolicy::default(),
            CostLedger::with_default_budget(TierTable::default()),
        )
        .unwrap_err();
        assert!(matches!(err, RouterError::Backend { tier: Tier::Fast, .. }));
    }

    #[test]
    fn knowledge_steps_increment() {
        let k = KnowledgeState::new(vec!["q".into()]);
        assert_eq!(k.step, 0);
        let k = k.with_facts(None).with_note("n".into());
        assert_eq!(k.step, 2);
        assert_eq!(k.facts(), ["q", "n"]);
    }
}
