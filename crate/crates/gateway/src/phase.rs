use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Lifecycle phase of a task.
///
/// ```text
/// received -> classified -> processing -> completed
///     |            |            |   \--> reflecting -> reflecting | completed
///     |            |            |   \--> healing    -> healing | refining | completed
///     |            |            |   \--> refining   -> refining | completed
///     v            v            v
///   failed       failed       failed   (any non-terminal phase may fail)
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Received,
    Classified,
    Processing,
    Reflecting,
    Healing,
    Refining,
    Completed,
    Failed,
}

impl Phase {
    pub const ALL: [Phase; 8] = [
        Self::Received,
        Self::Classified,
        Self::Processing,
        Self::Reflecting,
        Self::Healing,
        Self::Refining,
        Self::Completed,
        Self::Failed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Received => "received",
            Self::Classified => "classified",
            Self::Processing => "processing",
            Self::Reflecting => "reflecting",
            Self::Healing => "healing",
            Self::Refining => "refining",
            Self::Completed => "completed",
            Self::Failed => "failed",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Completed | Self::Failed)
    }

    /// Edges of the phase graph. Self-loops exist only for the repeatable
    /// phases (reflection rounds, heal attempts, refinement iterations).
    pub fn can_follow(self, prev: Option<Phase>) -> bool {
        use Phase::*;
        match prev {
            None => self == Received,
            Some(p) if p.is_terminal() => false,
            Some(_) if self == Failed => true,
            Some(Received) => self == Classified,
            Some(Classified) => self == Processing,
            Some(Processing) => matches!(self, Reflecting | Healing | Refining | Completed),
            Some(Reflecting) => matches!(self, Reflecting | Completed),
            Some(Healing) => matches!(self, Healing | Refining | Completed),
            Some(Refining) => matches!(self, Refining | Completed),
            Some(Completed | Failed) => false,
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskStatusEvent {
    pub task_id: String,
    /// 0-based position in the task's event sequence.
    pub seq: u64,
    pub phase: Phase,
    pub timestamp: DateTime<Utc>,
    pub detail: String,
}

/// True when `phases` is a walk through the phase graph that starts at
/// `received` and, if `complete`, ends in exactly one terminal phase.
pub fn is_valid_path(phases: &[Phase], complete: bool) -> bool {
    let mut prev = None;
    for &p in phases {
        if !p.can_follow(prev) {
            return false;
        }
        prev = Some(p);
    }
    !complete || prev.is_some_and(Phase::is_terminal)
}
