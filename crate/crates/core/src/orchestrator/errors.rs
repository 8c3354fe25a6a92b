use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorClass {
    ImportError,
    ShapeMismatch,
    MemoryOverflow,
    Timeout,
    FileNotFound,
    Other,
}

impl ErrorClass {
    pub fn name(self) -> &'static str {
        match self {
            Self::ImportError => "import-error",
            Self::ShapeMismatch => "shape-mismatch",
            Self::MemoryOverflow => "memory-overflow",
            Self::Timeout => "timeout",
            Self::FileNotFound => "file-not-found",
            Self::Other => "other",
        }
    }

    /// One-line repair guidance included in the heal prompt.
    pub fn advice(self) -> &'static str {
        match self {
            Self::ImportError => "A module is missing: switch to an installed library or guard the import with a fallback.",
            Self::ShapeMismatch => "Array or frame shapes disagree: check feature alignment between train and test and the target length.",
            Self::MemoryOverflow => "The process ran out of memory: downcast dtypes, sample, or process in chunks.",
            Self::Timeout => "The script ran too long: reduce model size, folds, epochs or data volume.",
            Self::FileNotFound => "A path is wrong: list the workspace and use the files that actually exist.",
            Self::Other => "Fix the error shown in the traceback with the smallest possible change.",
        }
    }
}

impl std::fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered pattern table; the first class with a matching pattern wins.
/// Patterns are the messages CPython, NumPy, pandas, scikit-learn and
/// PyTorch actually print.
pub const ERROR_PATTERNS: &[(ErrorClass, &str)] = &[
    (ErrorClass::Timeout, r"\bTimeoutError\b|\bTimeoutExpired\b|(?i:\btimed out\b)"),
    (
        ErrorClass::MemoryOverflow,
        r"(?m)\bMemoryError\b|_ArrayMemoryError|Unable to allocate|(?i:out of memory)|std::bad_alloc|^\s*Killed\s*$|\bOOM\b",
    ),
    (ErrorClass::ImportError, r"\bModuleNotFoundError\b|\bImportError\b|No module named"),
    (ErrorClass::FileNotFound, r"\bFileNotFoundError\b|No such file or directory"),
    (
        ErrorClass::ShapeMismatch,
        r"could not be broadcast|shapes cannot be multiplied|shape mismatch|size mismatch|inconsistent numbers of samples|Length of values \(\d+\) does not match length of index|features, but \w+ is expecting|(?i:shapes? .* (?:not aligned|mismatch|incompatible))",
    ),
];

static COMPILED: LazyLock<Vec<(ErrorClass, Regex)>> = LazyLock::new(|| {
    ERROR_PATTERNS
        .iter()
        .map(|(c, p)| (*c, Regex::new(p).expect("error pattern compiles")))
        .collect()
});

pub fn classify_error(stderr: &str) -> ErrorClass {
    COMPILED
        .iter()
        .find(|(_, re)| re.is_match(stderr))
        .map_or(ErrorClass::Other, |(c, _)| *c)
}
