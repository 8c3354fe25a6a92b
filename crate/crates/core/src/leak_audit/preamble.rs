use std::fmt::Write;

use super::checks::{LeakCheck, LeakFinding};
use super::registry::LeakHintEntry;

const INSTRUCTIONS: [(LeakCheck, &str); 4] = [
    (
        LeakCheck::IdOverlap,
        "Compare ID-like columns between train and test for row-level overlap.",
    ),
    (
        LeakCheck::RowFingerprint,
        "Compute row fingerprints (hash of non-target features) to detect content duplication.",
    ),
    (
        LeakCheck::Temporal,
        "Check temporal ordering for timestamp-based competitions (leakage through temporal shuffling).",
    ),
    (
        LeakCheck::ByteHash,
        "Hash file bytes for media-based competitions to detect identical test/train files.",
    ),
];

/// Renders the text prepended to every codegen prompt. Section order is
/// fixed: registered hint, then the four checks in declaration order.
pub fn render_preamble(findings: &[LeakFinding], hint: Option<&LeakHintEntry>, flag_threshold: f64) -> String {
    let mut out = String::new();
    if let Some(h) = hint {
        let _ = writeln!(out, "{}", h.hint.trim());
        let _ = writeln!(out);
    }
    let _ = writeln!(out, "LEAK AUDIT: before training any model, check the data for leakage:");
    for (i, (check, text)) in INSTRUCTIONS.iter().enumerate() {
        let _ = writeln!(out, "{}. {text}", i + 1);
        let Some(f) = findings.iter().find(|f| f.check == *check) else {
            continue;
        };
        if f.severity >= flag_threshold {
            let _ = writeln!(
                out,
                "   LEAK DETECTED ({}, severity {:.3}): {}",
                check.name(),
                f.severity,
                f.evidence
            );
            let _ = writeln!(out, "   Exploit: {}", f.exploit_sketch);
        } else {
            let _ = writeln!(out, "   audit: severity {:.3}; {}", f.severity, f.evidence);
        }
    }
    let _ = writeln!(
        out,
        "If a leak is confirmed, exploit it directly for the affected rows and model only the rest."
    );
    out
}
