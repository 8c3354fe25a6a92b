//! Compute-grounded reasoning engine.
//!
//! Deterministic building blocks for a spatial question-answering and ML
//! competition agent: scene graphs with geometric queries, answer grading,
//! entropy-guided tier routing with cost budgets, train/test leak audits,
//! and a self-healing, score-refined pipeline driver.

pub mod scene_graph;
pub mod grading;
pub mod router;
pub mod leak_audit;
pub mod orchestrator;
