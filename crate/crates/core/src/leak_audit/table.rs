use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use serde::Serialize;

use super::AuditError;

/// A string-celled table with named columns.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self, AuditError> {
        let mut seen = BTreeSet::new();
        for c in &columns {
            if !seen.insert(c.as_str()) {
                return Err(AuditError::DuplicateColumn(c.clone()));
            }
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != columns.len() {
                return Err(AuditError::RaggedRow {
                    row: i + 1,
                    expected: columns.len(),
                    found: r.len(),
                });
            }
        }
        Ok(Self { columns, rows })
    }

    /// Builds a table from string literals; handy in tests.
    pub fn from_rows(columns: &[&str], rows: &[&[&str]]) -> Result<Self, AuditError> {
        Self::new(
            columns.iter().map(|s| s.to_string()).collect(),
            rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
        )
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, AuditError> {
        let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
        let columns = rdr
            .headers()
            .map_err(|e| AuditError::Csv(e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| AuditError::Csv(e.to_string()))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Self::new(columns, rows)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, AuditError> {
        let f = std::fs::File::open(path).map_err(|e| AuditError::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(f)
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.column_index(name).is_some()
    }

    pub fn push_row(&mut self, row: Vec<String>) -> Result<(), AuditError> {
        if row.len() != self.columns.len() {
            return Err(AuditError::RaggedRow {
                row: self.rows.len() + 1,
                expected: self.columns.len(),
                found: row.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }
}

/// Train and test tables plus the roles of special columns.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TabularDataset {
    pub train: Table,
    pub test: Table,
    pub target: Option<String>,
    pub time_column: Option<String>,
}

impl TabularDataset {
    pub fn new(train: Table, test: Table, target: Option<String>, time_column: Option<String>) -> Result<Self, AuditError> {
        if let Some(t) = &target {
            if test.has_column(t) {
                return Err(AuditError::TargetInTest(t.clone()));
            }
        }
        Ok(Self {
            train,
            test,
            target,
            time_column,
        })
    }

    /// Columns present in both tables other than the target, sorted by name.
    pub fn shared_feature_columns(&self) -> Vec<&str> {
        let mut shared: Vec<&str> = self
            .train
            .columns()
            .iter()
            .map(String::as_str)
            .filter(|c| self.test.has_column(c) && Some(*c) != self.target.as_deref())
            .collect();
        shared.sort_unstable();
        shared
    }

    /// Shared columns that look like identifiers: by name (`id`, `*_id`,
    /// `*Id`, `index`, `key`) or because every test value is distinct.
    pub fn id_like_columns(&self) -> Vec<&str> {
        self.shared_feature_columns()
            .into_iter()
            .filter(|c| Some(*c) != self.time_column.as_deref())
            .filter(|c| id_like_name(c) || self.unique_in_test(c))
            .collect()
    }

    fn unique_in_test(&self, column: &str) -> bool {
        let Some(values) = self.test.column(column) else {
            return false;
        };
        if values.is_empty() {
            return false;
        }
        let distinct: BTreeSet<&str> = values.iter().map(|v| v.trim()).collect();
        distinct.len() == values.len()
    }
}

pub fn id_like_name(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    lower == "id" || lower.ends_with("_id") || name.ends_with("Id") || lower == "index" || lower == "key"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_names() {
        for n in ["id", "ID", "request_id", "userId", "index", "Key"] {
            assert!(id_like_name(n), "{n}");
        }
        for n in ["width", "idle", "keys", "identity"] {
            assert!(!id_like_name(n), "{n}");
        }
    }

    #[test]
    fn csv_parsing() {
        let t = Table::from_csv_reader("id, label\n1,a\n2,\"b,c\"\n".as_bytes()).unwrap();
        assert_eq!(t.columns(), ["id", "label"]);
        assert_eq!(t.column("label").unwrap(), ["a", "b,c"]);
        assert!(Table::from_csv_reader("a,b\n1\n".as_bytes()).is_err());
        assert!(matches!(Table::from_rows(&["a", "a"], &[]), Err(AuditError::DuplicateColumn(_))));
    }

    #[test]
    fn target_must_not_be_in_test() {
        let train = Table::from_rows(&["id", "y"], &[&["1", "0"]]).unwrap();
        let test = Table::from_rows(&["id", "y"], &[&["2", "1"]]).unwrap();
        assert!(matches!(
            TabularDataset::new(train, test, Some("y".into()), None),
            Err(AuditError::TargetInTest(_))
        ));
    }

    #[test]
    fn id_like_detection() {
        let train = Table::from_rows(&["row", "color", "y", "ts"], &[&["1", "red", "0", "5"]]).unwrap();
        let test = Table::from_rows(&["row", "color", "ts"], &[&["7", "red", "6"], &["8", "red", "7"]]).unwrap();
        let d = TabularDataset::new(train, test, Some("y".into()), Some("ts".into())).unwrap();
        assert_eq!(d.shared_feature_columns(), ["color", "row", "ts"]);
        assert_eq!(d.id_like_columns(), ["row"]);
    }
}
