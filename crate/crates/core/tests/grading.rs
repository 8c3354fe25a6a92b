use std::path::PathBuf;

use atlas_core::grading::{fuzzy_match, grade, must_exclude, must_include, numerical_match, token_f1, ScoringSpec};
use proptest::prelude::*;
use serde_json::Value;

fn corpus() -> Vec<Value> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/grading_corpus.jsonl");
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn golden_corpus() {
    let records = corpus();
    assert!(records.len() >= 60);
    for (i, r) in records.iter().enumerate() {
        let spec: ScoringSpec = serde_json::from_value(r["spec"].clone()).unwrap_or_else(|e| panic!("record {i}: {e}"));
        let pred = r["pred"].as_str().unwrap();
        match (grade(&spec, pred), r.get("expected"), r.get("error")) {
            (Ok(res), Some(exp), None) => {
                assert!(res.score() <= 1);
                assert_eq!(u64::from(res.score()), exp.as_u64().unwrap(), "record {i}: {r} -> {}", res.detail);
            }
            (Err(e), None, Some(kind)) => assert_eq!(e.kind(), kind.as_str().unwrap(), "record {i}"),
            (got, _, _) => panic!("record {i}: {r} -> {got:?}"),
        }
    }
}

#[test]
fn corpus_covers_every_function() {
    let mut counts = std::collections::BTreeMap::new();
    for r in corpus() {
        *counts.entry(r["spec"]["function"].as_str().unwrap().to_string()).or_insert(0) += 1;
    }
    assert_eq!(counts.len(), 6);
    assert!(counts.values().all(|&c| c >= 10), "{counts:?}");
}

#[test]
fn detail_strings() {
    let r = must_include("forklift", &["pallet".to_string()]);
    assert_eq!(r.score(), 0);
    assert!(r.detail.contains("pallet"), "{}", r.detail);
    let r = fuzzy_match("three pallets near exit", "three pallets", 0.8).unwrap();
    assert!(r.detail.contains("0.667") || r.detail.contains("0.66"), "{}", r.detail);
    let spec: ScoringSpec = serde_json::from_str(r#"{"function":"json","gold":{"count":3}}"#).unwrap();
    assert!(grade(&spec, r#"answer: {"count": 2}"#).unwrap().detail.contains("count"));
    assert!(serde_json::from_str::<ScoringSpec>(r#"{"function":"regex","gold":"x"}"#).is_err());
}

fn word() -> impl Strategy<Value = String> {
    prop_oneof![Just("pallet"), Just("Box"), Just("exit"), Just("3"), Just("aisle"), Just("RED"), Just("north-east")]
        .prop_map(str::to_string)
}

fn phrase() -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 0..6).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn fuzzy_self_match_and_symmetry(a in phrase(), b in phrase()) {
        if !atlas_core::grading::tokenize(&a).is_empty() {
            prop_assert_eq!(fuzzy_match(&a, &a, 1.0).unwrap().score(), 1);
        }
        let (f_ab, _) = token_f1(&a, &b);
        let (f_ba, _) = token_f1(&b, &a);
        prop_assert!((0.0..=1.0).contains(&f_ab));
        prop_assert_eq!(f_ab, f_ba);
    }

    #[test]
    fn substring_checks_ignore_case_and_compose(p in phrase(), a in prop::collection::vec(word(), 0..3), b in prop::collection::vec(word(), 0..3)) {
        let upper = p.to_uppercase();
        prop_assert_eq!(must_include(&p, &a).score(), must_include(&upper, &a).score());
        prop_assert_eq!(must_exclude(&p, &a).score(), must_exclude(&upper, &a).score());
        let union: Vec<String> = a.iter().chain(&b).cloned().collect();
        prop_assert_eq!(must_include(&p, &union).passed(), must_include(&p, &a).passed() && must_include(&p, &b).passed());
        prop_assert_eq!(must_exclude(&p, &union).passed(), must_exclude(&p, &a).passed() && must_exclude(&p, &b).passed());
    }

    #[test]
    fn numerical_is_monotone(g in -1e4f64..1e4, d1 in 0f64..10.0, d2 in 0f64..10.0, eps in 0f64..0.2) {
        let (near, far) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let p_near = numerical_match(&format!("{}", g + near), g, eps).unwrap();
        let p_far = numerical_match(&format!("{}", g - far), g, eps).unwrap();
        if p_far.passed() {
            prop_assert!(p_near.passed());
        }
    }

    #[test]
    fn grading_is_pure(p in phrase(), g in phrase()) {
        let spec = ScoringSpec::Fuzzy { gold: format!("{g} pallet"), threshold: 0.5 };
        prop_assert_eq!(grade(&spec, &p).unwrap(), grade(&spec, &p).unwrap());
    }
}
