use std::collections::HashSet;
use std::path::PathBuf;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::Serialize;
use sha2::{Digest, Sha256};
use xxhash_rust::xxh64::xxh64;

use super::table::{id_like_name, TabularDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeakCheck {
    IdOverlap,
    RowFingerprint,
    Temporal,
    ByteHash,
}

impl LeakCheck {
    pub const ALL: [LeakCheck; 4] = [Self::IdOverlap, Self::RowFingerprint, Self::Temporal, Self::ByteHash];

    pub fn name(self) -> &'static str {
        match self {
            Self::IdOverlap => "id-overlap",
            Self::RowFingerprint => "row-fingerprint",
            Self::Temporal => "temporal",
            Self::ByteHash => "byte-hash",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeakFinding {
    pub check: LeakCheck,
    /// Fraction of test items affected, in [0, 1].
    pub severity: f64,
    pub evidence: String,
    pub exploit_sketch: String,
}

impl LeakFinding {
    fn new(check: LeakCheck, severity: f64, evidence: String, exploit_sketch: String) -> Self {
        debug_assert!((0.0..=1.0).contains(&severity));
        Self {
            check,
            severity,
            evidence,
            exploit_sketch,
        }
    }

    fn clean(check: LeakCheck, evidence: impl Into<String>) -> Self {
        Self::new(check, 0.0, evidence.into(), String::new())
    }
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Overlap between distinct test ids and train ids, on the id-like column
/// with the highest overlap.
pub fn audit_id_overlap(data: &TabularDataset) -> LeakFinding {
    let columns = data.id_like_columns();
    if columns.is_empty() {
        return LeakFinding::clean(LeakCheck::IdOverlap, "no id-like column shared by train and test");
    }

    let mut best: Option<(f64, &str, usize, usize)> = None;
    for col in columns {
        let (Some(train), Some(test)) = (data.train.column(col), data.test.column(col)) else {
            continue;
        };
        let train: HashSet<&str> = train.into_iter().map(str::trim).collect();
        let test: HashSet<&str> = test.into_iter().map(str::trim).collect();
        let shared = test.iter().filter(|v| train.contains(*v)).count();
        let sev = fraction(shared, test.len());
        let better = match best {
            None => true,
            Some((b, bcol, _, _)) => {
                sev > b || (sev == b && (id_like_name(col), std::cmp::Reverse(col)) > (id_like_name(bcol), std::cmp::Reverse(bcol)))
            }
        };
        if better {
            best = Some((sev, col, shared, test.len()));
        }
    }
    let Some((severity, col, shared, total)) = best else {
        return LeakFinding::clean(LeakCheck::IdOverlap, "no id-like column shared by train and test");
    };
    let target = data.target.as_deref().unwrap_or("the target");
    LeakFinding::new(
        LeakCheck::IdOverlap,
        severity,
        format!("column `{col}`: {shared} of {total} distinct test ids also appear in train"),
        format!(
            "Build a dictionary from train `{col}` to `{target}` and, for every test row whose `{col}` is in it, \
             submit the train value directly; model only the remaining rows."
        ),
    )
}

/// Stable 64-bit fingerprint of one row: XXH64 (seed 0) over the trimmed
/// cells of `columns`, joined with the ASCII unit separator.
pub fn row_fingerprint(cells: &[&str]) -> u64 {
    let joined = cells.iter().map(|c| c.trim()).collect::<Vec<_>>().join("\u{1f}");
    xxh64(joined.as_bytes(), 0)
}

fn fingerprints(table: &super::table::Table, columns: &[&str]) -> Vec<u64> {
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| table.column_index(c).expect("shared column"))
        .collect();
    table
        .rows()
        .iter()
        .map(|r| {
            let cells: Vec<&str> = idx.iter().map(|&i| r[i].as_str()).collect();
            row_fingerprint(&cells)
        })
        .collect()
}

pub fn audit_row_fingerprints(data: &TabularDataset) -> LeakFinding {
    let columns = data.shared_feature_columns();
    if columns.is_empty() {
        return LeakFinding::clean(LeakCheck::RowFingerprint, "no shared non-target columns");
    }
    let train: HashSet<u64> = fingerprints(&data.train, &columns).into_iter().collect();
    let test = fingerprints(&data.test, &columns);
    let dup = test.iter().filter(|f| train.contains(f)).count();
    let severity = fraction(dup, test.len());
    let target = data.target.as_deref().unwrap_or("the target");
    LeakFinding::new(
        LeakCheck::RowFingerprint,
        severity,
        format!(
            "{dup} of {} test rows duplicate a train row on {} shared columns ({})",
            test.len(),
            columns.len(),
            columns.join(", ")
        ),
        format!(
            "Hash the shared feature columns of each row, map train hashes to `{target}`, and copy the label for \
             test rows with a matching hash."
        ),
    )
}

/// Parses a column of timestamps as seconds. All non-empty cells must be
/// numeric, or all must be dates / datetimes.
pub fn parse_timestamps(values: &[&str]) -> Option<Vec<f64>> {
    let cells: Vec<&str> = values.iter().map(|v| v.trim()).filter(|v| !v.is_empty()).collect();
    let numeric: Option<Vec<f64>> = cells
        .iter()
        .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
        .collect();
    if numeric.is_some() {
        return numeric;
    }
    cells.iter().map(|v| parse_datetime(v)).collect()
}

fn parse_datetime(v: &str) -> Option<f64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(v) {
        return Some(dt.timestamp() as f64 + dt.timestamp_subsec_nanos() as f64 * 1e-9);
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(v, fmt) {
            let utc = dt.and_utc();
            return Some(utc.timestamp() as f64 + utc.timestamp_subsec_nanos() as f64 * 1e-9);
        }
    }
    NaiveDate::parse_from_str(v, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp() as f64)
}

/// Fraction of test timestamps at or before the latest train timestamp.
pub fn audit_temporal(data: &TabularDataset) -> LeakFinding {
    let Some(col) = data.time_column.as_deref() else {
        return LeakFinding::clean(LeakCheck::Temporal, "skipped: no time column");
    };
    let (Some(train), Some(test)) = (data.train.column(col), data.test.column(col)) else {
        return LeakFinding::clean(LeakCheck::Temporal, format!("skipped: time column `{col}` missing from train or test"));
    };
    let (Some(train), Some(test)) = (parse_timestamps(&train), parse_timestamps(&test)) else {
        return LeakFinding::clean(LeakCheck::Temporal, format!("skipped: unparseable timestamps in `{col}`"));
    };
    let range = |v: &[f64]| {
        v.iter()
            .fold(None, |acc: Option<(f64, f64)>, &x| Some(acc.map_or((x, x), |(lo, hi)| (lo.min(x), hi.max(x)))))
    };
    let (Some((train_lo, train_hi)), Some((test_lo, test_hi))) = (range(&train), range(&test)) else {
        return LeakFinding::clean(LeakCheck::Temporal, format!("skipped: no timestamps in `{col}`"));
    };
    let inside = test.iter().filter(|&&t| t <= train_hi).count();
    LeakFinding::new(
        LeakCheck::Temporal,
        fraction(inside, test.len()),
        format!(
            "column `{col}`: train spans [{train_lo}, {train_hi}], test spans [{test_lo}, {test_hi}]; \
             {inside} of {} test rows fall at or before the last train timestamp",
            test.len()
        ),
        format!(
            "Test rows fall inside the training period: use neighbouring train rows in `{col}` order \
             (lags, interpolation, or exact timestamp matches) to predict them instead of extrapolating."
        ),
    )
}

/// Media files for the byte-hash check.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MediaFiles {
    pub train: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
}

pub fn audit_byte_hashes(train_files: &[PathBuf], test_files: &[PathBuf]) -> LeakFinding {
    let mut errors = Vec::new();
    let mut digest = |p: &PathBuf| match std::fs::read(p) {
        Ok(bytes) => Some(<[u8; 32]>::from(Sha256::digest(&bytes))),
        Err(e) => {
            errors.push(format!("{}: {e}", p.display()));
            None
        }
    };
    let train: HashSet<[u8; 32]> = train_files.iter().filter_map(&mut digest).collect();
    let test: Vec<[u8; 32]> = test_files.iter().filter_map(&mut digest).collect();
    let dup = test.iter().filter(|h| train.contains(*h)).count();
    let mut evidence = format!(
        "{dup} of {} readable test files are byte-identical to a train file",
        test.len()
    );
    if !errors.is_empty() {
        evidence.push_str(&format!("; skipped {} unreadable: {}", errors.len(), errors.join("; ")));
    }
    if test_files.is_empty() {
        evidence = "no test media files".to_string();
    }
    LeakFinding::new(
        LeakCheck::ByteHash,
        fraction(dup, test.len()),
        evidence,
        "Hash every train and test file's bytes, map train hashes to their labels, and copy the label for \
         byte-identical test files."
            .to_string(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leak_audit::Table;

    fn dataset(train_ids: &[&str], test_ids: &[&str]) -> TabularDataset {
        let train: Vec<Vec<&str>> = train_ids.iter().map(|i| vec![*i, "0"]).collect();
        let test: Vec<Vec<&str>> = test_ids.iter().map(|i| vec![*i]).collect();
        let train_refs: Vec<&[&str]> = train.iter().map(Vec::as_slice).collect();
        let test_refs: Vec<&[&str]> = test.iter().map(Vec::as_slice).collect();
        TabularDataset::new(
            Table::from_rows(&["id", "y"], &train_refs).unwrap(),
            Table::from_rows(&["id"], &test_refs).unwrap(),
            Some("y".into()),
            None,
        )
        .unwrap()
    }

    #[test]
    fn id_overlap_fractions() {
        let f = audit_id_overlap(&dataset(&["1", "2", "3"], &["2", "3", "4"]));
        assert_eq!(f.severity, 2.0 / 3.0);
        assert!(f.evidence.contains("2 of 3"), "{}", f.evidence);
        assert_eq!(audit_id_overlap(&dataset(&["1", "2"], &["3", "4"])).severity, 0.0);
        assert_eq!(audit_id_overlap(&dataset(&["1", "2", "3"], &["1", "3"])).severity, 1.0);
        assert_eq!(audit_id_overlap(&dataset(&["1"], &[])).severity, 0.0);
    }

    #[test]
    fn no_shared_id_column_is_zero() {
        let d = TabularDataset::new(
            Table::from_rows(&["a"], &[&["x"], &["x"]]).unwrap(),
            Table::from_rows(&["b"], &[&["x"]]).unwrap(),
            None,
            None,
        )
        .unwrap();
        let f = audit_id_overlap(&d);
        assert_eq!(f.severity, 0.0);
        assert!(f.evidence.contains("no id-like column"));
    }

    #[test]
    fn fingerprint_digests_are_pinned() {
        // XXH64 reference vector for empty input, seed 0
        assert_eq!(xxh64(b"", 0), 0xEF46_DB37_51D8_E999);
        assert_eq!(row_fingerprint(&["1", "red"]), xxh64(b"1\x1fred", 0));
        assert_eq!(row_fingerprint(&[" 1 ", "red "]), row_fingerprint(&["1", "red"]));
        assert_ne!(row_fingerprint(&["1", "red"]), row_fingerprint(&["1red"]));
    }

    #[test]
    fn fingerprints_ignore_column_order() {
        let train = Table::from_rows(&["a", "b", "y"], &[&["1", "x", "0"], &["2", "y", "1"]]).unwrap();
        let test1 = Table::from_rows(&["a", "b"], &[&["1", "x"], &["3", "z"]]).unwrap();
        let test2 = Table::from_rows(&["b", "a"], &[&["x", "1"], &["z", "3"]]).unwrap();
        let d1 = TabularDataset::new(train.clone(), test1, Some("y".into()), None).unwrap();
        let d2 = TabularDataset::new(train, test2, Some("y".into()), None).unwrap();
        assert_eq!(audit_row_fingerprints(&d1).severity, 0.5);
        assert_eq!(audit_row_fingerprints(&d2).severity, 0.5);
    }

    #[test]
    fn novel_rows_have_zero_fingerprint_severity() {
        let train = Table::from_rows(&["a", "b", "y"], &[&["1", "x", "0"], &["2", "y", "1"], &["3", "z", "0"]]).unwrap();
        let test = Table::from_rows(&["a", "b"], &[&["1", "y"], &["2", "z"], &["3", "x"]]).unwrap();
        let d = TabularDataset::new(train, test, Some("y".into()), None).unwrap();
        assert_eq!(audit_row_fingerprints(&d).severity, 0.0);
    }

    fn timed(train: &[&str], test: &[&str]) -> TabularDataset {
        let tr: Vec<Vec<&str>> = train.iter().map(|t| vec![*t]).collect();
        let te: Vec<Vec<&str>> = test.iter().map(|t| vec![*t]).collect();
        TabularDataset::new(
            Table::from_rows(&["t"], &tr.iter().map(Vec::as_slice).collect::<Vec<_>>()).unwrap(),
            Table::from_rows(&["t"], &te.iter().map(Vec::as_slice).collect::<Vec<_>>()).unwrap(),
            None,
            Some("t".into()),
        )
        .unwrap()
    }

    #[test]
    fn temporal_split() {
        assert_eq!(audit_temporal(&timed(&["1", "2", "3"], &["4", "5"])).severity, 0.0);
        assert_eq!(audit_temporal(&timed(&["1", "5"], &["2", "3"])).severity, 1.0);
        assert_eq!(audit_temporal(&timed(&["1", "5"], &["5", "6"])).severity, 0.5);
        assert_eq!(
            audit_temporal(&timed(&["2024-01-01", "2024-02-01"], &["2024-01-15", "2024-03-01T00:00:00Z"])).severity,
            0.5
        );
        let f = audit_temporal(&timed(&["1", "x"], &["2"]));
        assert_eq!(f.severity, 0.0);
        assert!(f.evidence.contains("unparseable"));
        let mut no_time = timed(&["1"], &["2"]);
        no_time.time_column = None;
        assert!(audit_temporal(&no_time).evidence.starts_with("skipped"));
    }

    #[test]
    fn byte_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let w = |name: &str, bytes: &[u8]| {
            let p = dir.path().join(name);
            std::fs::write(&p, bytes).unwrap();
            p
        };
        let train = vec![w("tr1.png", b"aaa"), w("tr2.png", b"bbb")];
        let test = vec![w("te1.png", b"bbb"), w("te2.png", b"ccc"), w("te3.png", b"ddd")];
        assert_eq!(audit_byte_hashes(&train, &test).severity, 1.0 / 3.0);
        assert_eq!(audit_byte_hashes(&train, &[]).severity, 0.0);

        let missing = vec![dir.path().join("nope.png"), test[0].clone()];
        let f = audit_byte_hashes(&train, &missing);
        assert_eq!(f.severity, 1.0);
        assert!(f.evidence.contains("skipped 1 unreadable"), "{}", f.evidence);
    }
}
