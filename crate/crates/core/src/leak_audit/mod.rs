//! Train/test leakage audit: four checks (id overlap, row fingerprints,
//! temporal ordering, byte hashes), a registry of competition-specific
//! hints, and the preamble handed to code generation.
//!
//! Row fingerprints use XXH64 with seed 0 over the trimmed cells of the
//! shared non-target columns, sorted by name and joined with `\x1f`.

mod checks;
mod preamble;
mod registry;
mod table;

use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

pub use checks::{
    audit_byte_hashes, audit_id_overlap, audit_row_fingerprints, audit_temporal, parse_timestamps, row_fingerprint,
    LeakCheck, LeakFinding, MediaFiles,
};
pub use preamble::render_preamble;
pub use registry::{lookup_hint, LeakHintEntry, LeakRegistry};
pub use table::{id_like_name, TabularDataset, Table};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuditError {
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("row {row} has {found} cells, expected {expected}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("target column `{0}` must not appear in test")]
    TargetInTest(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("io: {0}")]
    Io(String),
    #[error("leak registry: {0}")]
    Registry(String),
}

pub const DEFAULT_FLAG_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditConfig {
    /// Findings at or above this severity are flagged with their exploit.
    pub flag_threshold: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            flag_threshold: DEFAULT_FLAG_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeakAuditReport {
    /// One finding per check, in `LeakCheck::ALL` order.
    pub findings: Vec<LeakFinding>,
    pub matched_hint: Option<LeakHintEntry>,
    pub preamble: String,
}

impl LeakAuditReport {
    pub fn finding(&self, check: LeakCheck) -> &LeakFinding {
        self.findings.iter().find(|f| f.check == check).expect("every check reports")
    }

    pub fn flagged(&self, threshold: f64) -> impl Iterator<Item = &LeakFinding> {
        self.findings.iter().filter(move |f| f.severity >= threshold)
    }
}

pub fn run_audit(
    data: &TabularDataset,
    files: Option<&MediaFiles>,
    competition_id: &str,
    registry: &LeakRegistry,
) -> LeakAuditReport {
    run_audit_with(data, files, competition_id, registry, AuditConfig::default())
}

/// Runs the four checks concurrently and renders the preamble. Never fails:
/// a check that cannot run reports zero severity with the reason.
pub fn run_audit_with(
    data: &TabularDataset,
    files: Option<&MediaFiles>,
    competition_id: &str,
    registry: &LeakRegistry,
    config: AuditConfig,
) -> LeakAuditReport {
    let empty = MediaFiles::default();
    let files = files.unwrap_or(&empty);
    let findings = std::thread::scope(|s| {
        let id = s.spawn(|| audit_id_overlap(data));
        let fp = s.spawn(|| audit_row_fingerprints(data));
        let tm = s.spawn(|| audit_temporal(data));
        let bh = s.spawn(|| {
            if files.train.is_empty() && files.test.is_empty() {
                LeakFinding {
                    check: LeakCheck::ByteHash,
                    severity: 0.0,
                    evidence: "skipped: no media files".into(),
                    exploit_sketch: String::new(),
                }
            } else {
                audit_byte_hashes(&files.train, &files.test)
            }
        });
        [id, fp, tm, bh]
            .into_iter()
            .zip(LeakCheck::ALL)
            .map(|(h, check)| {
                h.join().unwrap_or_else(|_| LeakFinding {
                    check,
                    severity: 0.0,
                    evidence: "check panicked".into(),
                    exploit_sketch: String::new(),
                })
            })
            .collect::<Vec<_>>()
    });
    let matched_hint = registry.lookup(competition_id).cloned();
    let preamble = render_preamble(&findings, matched_hint.as_ref(), config.flag_threshold);
    LeakAuditReport {
        findings,
        matched_hint,
        preamble,
    }
}

/// Collects files under a directory (non-recursive), sorted by path.
pub fn list_files(dir: &std::path::Path) -> Result<Vec<PathBuf>, AuditError> {
    let mut out = Vec::new();
    let rd = std::fs::read_dir(dir).map_err(|e| AuditError::Io(format!("{}: {e}", dir.display())))?;
    for entry in rd {
        let entry = entry.map_err(|e| AuditError::Io(e.to_string()))?;
        if entry.path().is_file() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}
