use std::collections::BTreeSet;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use super::AuditError;

const BUILTIN: &str = include_str!("../../data/leak_registry.toml");

/// Competition-specific leak instructions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakHintEntry {
    pub competition_id: String,
    /// How the leak shows up in the data.
    pub detection: String,
    /// Text injected into the codegen prompt.
    pub hint: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakRegistry {
    #[serde(default, rename = "entry")]
    entries: Vec<LeakHintEntry>,
}

static BUILTIN_REGISTRY: LazyLock<LeakRegistry> =
    LazyLock::new(|| LeakRegistry::from_toml(BUILTIN).expect("bundled leak registry is valid"));

impl LeakRegistry {
    pub fn new(entries: Vec<LeakHintEntry>) -> Result<Self, AuditError> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if e.competition_id.trim().is_empty() {
                return Err(AuditError::Registry("empty competition id".into()));
            }
            if !seen.insert(e.competition_id.to_lowercase()) {
                return Err(AuditError::Registry(format!("duplicate competition id `{}`", e.competition_id)));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_toml(text: &str) -> Result<Self, AuditError> {
        let raw: LeakRegistry = toml::from_str(text).map_err(|e| AuditError::Registry(e.to_string()))?;
        Self::new(raw.entries)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, AuditError> {
        let text = std::fs::read_to_string(path).map_err(|e| AuditError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The registry shipped with the crate.
    pub fn builtin() -> &'static LeakRegistry {
        &BUILTIN_REGISTRY
    }

    pub fn entries(&self) -> &[LeakHintEntry] {
        &self.entries
    }

    pub fn lookup(&self, competition_id: &str) -> Option<&LeakHintEntry> {
        lookup_hint(competition_id, &self.entries)
    }
}

/// Exact, case-insensitive match on the competition id.
pub fn lookup_hint<'a>(competition_id: &str, registry: &'a [LeakHintEntry]) -> Option<&'a LeakHintEntry> {
    let id = competition_id.trim();
    registry.iter().find(|e| e.competition_id.eq_ignore_ascii_case(id))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_pizza_entry() {
        let reg = LeakRegistry::builtin();
        let e = reg.lookup("random-acts-of-pizza").unwrap();
        assert!(e.hint.contains("build a lookup dictionary from `request_id` to `requester_received_pizza`"));
        assert_eq!(reg.lookup("Random-Acts-Of-Pizza"), Some(e));
        assert!(reg.lookup("titanic").is_none());
        assert!(reg.lookup("random-acts").is_none());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "[[entry]]\ncompetition_id='a'\ndetection='d'\nhint='h'\n[[entry]]\ncompetition_id='A'\ndetection='d'\nhint='h'\n";
        assert!(matches!(LeakRegistry::from_toml(text), Err(AuditError::Registry(_))));
        assert!(LeakRegistry::from_toml("[[entry]]\ncompetition_id='a'\n").is_err());
        assert!(LeakRegistry::from_toml("").unwrap().entries().is_empty());
    }
}
