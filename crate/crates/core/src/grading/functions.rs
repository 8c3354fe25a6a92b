use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde_json::{Map, Value};

use super::{GradeError, ScoreResult};

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Case-insensitive equality after trimming.
pub fn exact_match(pred: &str, gold: &str) -> ScoreResult {
    let (p, g) = (normalize(pred), normalize(gold));
    ScoreResult::from_bool(p == g, format!("pred={p:?} gold={g:?}"))
}

/// Lowercased alphanumeric runs; duplicates are kept.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn multiset(tokens: &[String]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

/// Token-multiset F1 and the overlapping tokens (with multiplicity).
pub fn token_f1(pred: &str, gold: &str) -> (f64, Vec<String>) {
    let p = tokenize(pred);
    let g = tokenize(gold);
    if p.is_empty() || g.is_empty() {
        return (0.0, Vec::new());
    }
    let (pm, gm) = (multiset(&p), multiset(&g));
    let mut overlap = Vec::new();
    for (tok, &pc) in &pm {
        if let Some(&gc) = gm.get(tok) {
            overlap.extend(std::iter::repeat_n(tok.to_string(), pc.min(gc)));
        }
    }
    // 2PR/(P+R) with P = c/|p|, R = c/|g| reduces to 2c/(|p|+|g|)
    let f1 = 2.0 * overlap.len() as f64 / (p.len() + g.len()) as f64;
    (f1, overlap)
}

pub fn fuzzy_match(pred: &str, gold: &str, threshold: f64) -> Result<ScoreResult, GradeError> {
    if tokenize(gold).is_empty() {
        return Err(GradeError::EmptyGold);
    }
    let (f1, overlap) = token_f1(pred, gold);
    Ok(ScoreResult::from_bool(
        f1 >= threshold,
        format!("f1={f1:.4} threshold={threshold} overlap=[{}]", overlap.join(", ")),
    ))
}

pub fn must_include(pred: &str, required: &[String]) -> ScoreResult {
    let p = pred.to_lowercase();
    let missing: Vec<&str> = required
        .iter()
        .filter(|s| !p.contains(&s.to_lowercase()))
        .map(String::as_str)
        .collect();
    ScoreResult::from_bool(missing.is_empty(), format!("missing={missing:?}"))
}

pub fn must_exclude(pred: &str, banned: &[String]) -> ScoreResult {
    let p = pred.to_lowercase();
    let found: Vec<&str> = banned
        .iter()
        .filter(|s| p.contains(&s.to_lowercase()))
        .map(String::as_str)
        .collect();
    ScoreResult::from_bool(found.is_empty(), format!("found={found:?}"))
}

/// The whole prediction if it parses as an object, else the first
/// well-formed object starting at some `{`.
pub fn extract_first_object(pred: &str) -> Option<Map<String, Value>> {
    if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(pred.trim()) {
        return Some(map);
    }
    for (i, _) in pred.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&pred[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

pub fn json_match(pred: &str, gold: &Map<String, Value>, epsilon: f64) -> Result<ScoreResult, GradeError> {
    let parsed = extract_first_object(pred).ok_or(GradeError::UnparseablePrediction)?;
    match first_mismatch_in_object(&parsed, gold, "", epsilon) {
        None => Ok(ScoreResult::pass(format!("all {} gold fields matched", gold.len()))),
        Some((path, why)) => Ok(ScoreResult::fail(format!("path={path} {why}"))),
    }
}

fn join_path(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn first_mismatch_in_object(
    pred: &Map<String, Value>,
    gold: &Map<String, Value>,
    prefix: &str,
    epsilon: f64,
) -> Option<(String, String)> {
    for (key, gv) in gold {
        let path = join_path(prefix, key);
        match pred.get(key) {
            None => return Some((path, "missing".into())),
            Some(pv) => {
                if let Some(m) = first_mismatch(pv, gv, &path, epsilon) {
                    return Some(m);
                }
            }
        }
    }
    None
}

fn first_mismatch(pred: &Value, gold: &Value, path: &str, epsilon: f64) -> Option<(String, String)> {
    let differ = || Some((path.to_string(), format!("expected {gold} got {pred}")));
    match (gold, pred) {
        (Value::Object(g), Value::Object(p)) => first_mismatch_in_object(p, g, path, epsilon),
        (Value::Array(g), Value::Array(p)) => {
            if g.len() != p.len() {
                return Some((path.to_string(), format!("expected {} elements got {}", g.len(), p.len())));
            }
            g.iter()
                .zip(p)
                .enumerate()
                .find_map(|(i, (gv, pv))| first_mismatch(pv, gv, &format!("{path}[{i}]"), epsilon))
        }
        (Value::Number(g), Value::Number(p)) => match (g.as_f64(), p.as_f64()) {
            (Some(g), Some(p)) if within_tolerance(p, g, epsilon) => None,
            _ => differ(),
        },
        (Value::String(g), Value::String(p)) if normalize(g) == normalize(p) => None,
        (Value::Bool(g), Value::Bool(p)) if g == p => None,
        (Value::Null, Value::Null) => None,
        _ => differ(),
    }
}

fn within_tolerance(pred: f64, gold: f64, epsilon: f64) -> bool {
    (pred - gold).abs() <= epsilon * gold.abs().max(1.0)
}

static NUMBER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[+-]?(?:(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?|\.\d+)(?:[eE][+-]?\d+)?").expect("number pattern")
});

/// First decimal literal in `text`. Thousands separators are dropped; a
/// sign glued to a preceding letter (`aisle-3`) is not treated as a sign.
pub fn extract_first_number(text: &str) -> Option<f64> {
    for m in NUMBER.find_iter(text) {
        let mut literal = m.as_str();
        if literal.starts_with(['+', '-']) {
            let prev = text[..m.start()].chars().next_back();
            if prev.is_some_and(char::is_alphanumeric) {
                literal = &literal[1..];
            }
        }
        if let Ok(v) = literal.replace(',', "").parse::<f64>() {
            if v.is_finite() {
                return Some(v);
            }
        }
    }
    None
}

/// Passes iff `|p - gold| <= epsilon * max(1, |gold|)`.
pub fn numerical_match(pred: &str, gold: f64, epsilon: f64) -> Result<ScoreResult, GradeError> {
    let p = extract_first_number(pred).ok_or(GradeError::NoNumberFound)?;
    let allowed = epsilon * gold.abs().max(1.0);
    let diff = (p - gold).abs();
    Ok(ScoreResult::from_bool(
        diff <= allowed,
        format!("parsed={p} gold={gold} diff={diff} allowed={allowed}"),
    ))
}
