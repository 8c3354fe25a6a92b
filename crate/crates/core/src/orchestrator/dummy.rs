use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::strategy::{CompetitionMetadata, ProblemKind};
use super::OrchestratorError;
use crate::leak_audit::Table;

/// Data files found in an extracted competition archive.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct WorkspaceLayout {
    pub root: PathBuf,
    pub description: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub sample_submission: Option<PathBuf>,
    pub train_media: Option<PathBuf>,
    pub test_media: Option<PathBuf>,
}

const MAX_DEPTH: usize = 3;

fn walk(dir: &Path, depth: usize, files: &mut Vec<PathBuf>, dirs: &mut Vec<PathBuf>) {
    let Ok(rd) = std::fs::read_dir(dir) else { return };
    for entry in rd.flatten() {
        let p = entry.path();
        let Ok(ft) = entry.file_type() else { continue };
        if ft.is_dir() {
            dirs.push(p.clone());
            if depth < MAX_DEPTH {
                walk(&p, depth + 1, files, dirs);
            }
        } else if ft.is_file() {
            files.push(p);
        }
    }
}

/// Shallowest match wins, then the lexicographically smallest path.
fn pick(paths: &[PathBuf], root: &Path, pred: impl Fn(&str) -> bool) -> Option<PathBuf> {
    paths
        .iter()
        .filter(|p| p.file_name().and_then(|n| n.to_str()).map(|n| pred(&n.to_lowercase())).unwrap_or(false))
        .min_by_key(|p| (p.strip_prefix(root).map(|r| r.components().count()).unwrap_or(usize::MAX), (*p).clone()))
        .cloned()
}

impl WorkspaceLayout {
    pub fn discover(root: &Path) -> Result<Self, OrchestratorError> {
        if !root.is_dir() {
            return Err(OrchestratorError::WorkspaceInvalid(format!("{} is not a directory", root.display())));
        }
        let (mut files, mut dirs) = (Vec::new(), Vec::new());
        walk(root, 0, &mut files, &mut dirs);
        let ignore = |n: &str| n == super::exec::SUBMISSION_FILE;
        Ok(Self {
            root: root.to_path_buf(),
            description: pick(&files, root, |n| n.starts_with("description") && (n.ends_with(".md") || n.ends_with(".txt"))),
            train: pick(&files, root, |n| n.starts_with("train") && n.ends_with(".csv")),
            test: pick(&files, root, |n| n.starts_with("test") && n.ends_with(".csv") && !ignore(n)),
            sample_submission: pick(&files, root, |n| n.contains("sample_submission") && n.ends_with(".csv")),
            train_media: pick(&dirs, root, |n| n == "train" || n == "train_images"),
            test_media: pick(&dirs, root, |n| n == "test" || n == "test_images"),
        })
    }
}

fn read_table(path: &Path) -> Result<Table, OrchestratorError> {
    Table::from_csv_path(path).map_err(|e| OrchestratorError::Dummy(format!("{}: {e}", path.display())))
}

/// Most frequent label; ties go to the lexicographically smallest.
pub fn mode(values: &[&str]) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in values.iter().map(|v| v.trim()).filter(|v| !v.is_empty()) {
        *counts.entry(v).or_default() += 1;
    }
    // BTreeMap iterates in ascending order and max_by_key keeps the last
    // maximum, so reverse to make the smallest label win ties.
    counts.into_iter().rev().max_by_key(|(_, c)| *c).map(|(v, _)| v.to_string())
}

pub fn mean(values: &[&str]) -> Option<f64> {
    let nums: Vec<f64> = values
        .iter()
        .map(|v| v.trim())
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
        .collect::<Option<_>>()?;
    if nums.is_empty() {
        return None;
    }
    Some(nums.iter().sum::<f64>() / nums.len() as f64)
}

fn format_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{x:.1}")
    } else {
        format!("{x}")
    }
}

/// The constant predicted for a target column: mean for regression (when
/// every value is numeric), mode otherwise.
pub fn constant_prediction(values: &[&str], kind: ProblemKind) -> Option<String> {
    match kind {
        ProblemKind::Regression => mean(values).map(format_number).or_else(|| mode(values)),
        ProblemKind::Classification => mode(values),
    }
}

/// Writes a valid constant submission to `output`, shaped like the sample
/// submission (or like the test table's first column plus the target when
/// there is no sample).
pub fn make_dummy_submission(
    meta: &CompetitionMetadata,
    layout: &WorkspaceLayout,
    output: &Path,
) -> Result<PathBuf, OrchestratorError> {
    let train = layout.train.as_deref().map(read_table).transpose()?;
    let kind = meta.problem_kind();
    let predict = |column: &str| -> Option<String> {
        let train = train.as_ref()?;
        let values = train.column(column)?;
        constant_prediction(&values, kind)
    };

    let (header, rows): (Vec<String>, Vec<Vec<String>>) = if let Some(sample_path) = &layout.sample_submission {
        let sample = read_table(sample_path)?;
        let header = sample.columns().to_vec();
        let targets = &header[1.min(header.len())..];
        let single_target = targets.len() == 1;
        let constants: Vec<Option<String>> = targets
            .iter()
            .map(|c| {
                predict(c).or_else(|| {
                    single_target
                        .then(|| meta.target_column.as_deref().and_then(&predict))
                        .flatten()
                })
            })
            .collect();
        let rows = sample
            .rows()
            .iter()
            .map(|r| {
                let mut out = vec![r.first().cloned().unwrap_or_default()];
                for (i, c) in constants.iter().enumerate() {
                    out.push(c.clone().unwrap_or_else(|| r[i + 1].clone()));
                }
                out
            })
            .collect();
        (header, rows)
    } else if let Some(test_path) = &layout.test {
        let test = read_table(test_path)?;
        let target = meta
            .target_column
            .clone()
            .ok_or_else(|| OrchestratorError::Dummy("no sample submission and no target column".into()))?;
        let constant = predict(&target).ok_or_else(|| OrchestratorError::Dummy(format!("no train values for `{target}`")))?;
        let id = test
            .columns()
            .first()
            .cloned()
            .ok_or_else(|| OrchestratorError::Dummy("test table has no columns".into()))?;
        let rows = test.rows().iter().map(|r| vec![r[0].clone(), constant.clone()]).collect();
        (vec![id, target], rows)
    } else {
        return Err(OrchestratorError::NoTestData);
    };

    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| OrchestratorError::Dummy(format!("{}: {e}", dir.display())))?;
    }
    let mut w = csv::Writer::from_path(output).map_err(|e| OrchestratorError::Dummy(e.to_string()))?;
    w.write_record(&header).map_err(|e| OrchestratorError::Dummy(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| OrchestratorError::Dummy(e.to_string()))?;
    }
    w.flush().map_err(|e| OrchestratorError::Dummy(e.to_string()))?;
    Ok(output.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_and_mean() {
        assert_eq!(mode(&["a", "a", "b"]).as_deref(), Some("a"));
        assert_eq!(mode(&["b", "b", "a", "a"]).as_deref(), Some("a"));
        assert_eq!(mode(&["c", "b", "c", "b", "z"]).as_deref(), Some("b"));
        assert_eq!(mode(&[]), None);
        assert_eq!(mean(&["1.0", "3.0"]), Some(2.0));
        assert_eq!(mean(&["1", "x"]), None);
        assert_eq!(constant_prediction(&["1.0", "3.0"], ProblemKind::Regression).as_deref(), Some("2.0"));
        assert_eq!(constant_prediction(&["1", "2"], ProblemKind::Regression).as_deref(), Some("1.5"));
    }

    /// Every permutation of a tied multiset yields the same, smallest label.
    #[test]
    fn tie_break_is_order_independent() {
        let labels = ["b", "a", "c", "a", "b", "c"];
        let mut perm = labels;
        for _ in 0..50 {
            perm.rotate_left(1);
            perm.swap(0, 3);
            assert_eq!(mode(&perm).as_deref(), Some("a"));
        }
    }

    fn workspace(files: &[(&str, &str)]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (name, body) in files {
            let p = dir.path().join(name);
            std::fs::create_dir_all(p.parent().unwrap()).unwrap();
            std::fs::write(p, body).unwrap();
        }
        dir
    }

    #[test]
    fn dummy_follows_sample_submission() {
        let dir = workspace(&[
            ("data/train.csv", "id,f,label\n1,x,a\n2,y,a\n3,z,b\n"),
            ("data/test.csv", "id,f\n7,q\n8,r\n9,s\n"),
            ("data/sample_submission.csv", "id,label\n7,b\n8,b\n9,b\n"),
        ]);
        let layout = WorkspaceLayout::discover(dir.path()).unwrap();
        let out = dir.path().join("out.csv");
        let meta = CompetitionMetadata {
            task_type: "classification".into(),
            ..Default::default()
        };
        make_dummy_submission(&meta, &layout, &out).unwrap();
        assert_eq!(std::fs::read_to_string(&out).unwrap(), "id,label\n7,a\n8,a\n9,a\n");
    }

    #[test]
    fn dummy_regression_without_sample() {
        let dir = workspace(&[("train.csv", "id,y\n1,1.0\n2,3.0\n"), ("test.csv", "id\n5\n6\n")]);
        let layout = WorkspaceLayout::discover(dir.path()).unwrap();
        let out = dir.path().join("out.csv");
        let meta = CompetitionMetadata {
            task_type: "regression".into(),
            target_column: Some("y".into()),
            ..Default::default()
        };
        make_dummy_submission(&meta, &layout, &out).unwrap();
        assert_eq!(std::fs::read_to_string(&out).unwrap(), "id,y\n5,2.0\n6,2.0\n");
    }

    #[test]
    fn dummy_without_test_data_fails() {
        let dir = workspace(&[("train.csv", "id,y\n1,1\n")]);
        let layout = WorkspaceLayout::discover(dir.path()).unwrap();
        assert!(matches!(
            make_dummy_submission(&CompetitionMetadata::default(), &layout, &dir.path().join("o.csv")),
            Err(OrchestratorError::NoTestData)
        ));
    }

    #[test]
    fn layout_prefers_shallow_files() {
        let dir = workspace(&[("a/b/train.csv", ""), ("train.csv", ""), ("description.md", "x"), ("test/1.png", "")]);
        let l = WorkspaceLayout::discover(dir.path()).unwrap();
        assert_eq!(l.train.unwrap(), dir.path().join("train.csv"));
        assert!(l.description.is_some());
        assert_eq!(l.test_media.unwrap(), dir.path().join("test"));
        assert!(WorkspaceLayout::discover(&dir.path().join("missing")).is_err());
    }
}
