use serde::{Deserialize, Serialize};

use super::graph::{euclidean, SceneGraph};
use super::{normalize_label, SceneError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    MinDistance,
    MaxDistance,
    ZoneContainment,
}

/// A spatial rule over labelled entities. Distances are in scene units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SpatialConstraint {
    /// Every (subject, object) pair must be at least `threshold` apart.
    MinDistance { subject: String, object: String, threshold: f64 },
    /// Every (subject, object) pair must be at most `threshold` apart.
    MaxDistance { subject: String, object: String, threshold: f64 },
    /// Every subject entity must sit in `zone`.
    ZoneContainment { subject: String, zone: String },
}

impl SpatialConstraint {
    pub fn min_distance(subject: &str, object: &str, threshold: f64) -> Result<Self, SceneError> {
        check_threshold(threshold)?;
        Ok(Self::MinDistance {
            subject: normalize_label(subject),
            object: normalize_label(object),
            threshold,
        })
    }

    pub fn max_distance(subject: &str, object: &str, threshold: f64) -> Result<Self, SceneError> {
        check_threshold(threshold)?;
        Ok(Self::MaxDistance {
            subject: normalize_label(subject),
            object: normalize_label(object),
            threshold,
        })
    }

    pub fn zone_containment(subject: &str, zone: &str) -> Result<Self, SceneError> {
        if zone.trim().is_empty() {
            return Err(SceneError::InvalidConstraint("empty zone".into()));
        }
        Ok(Self::ZoneContainment {
            subject: normalize_label(subject),
            zone: zone.trim().to_string(),
        })
    }

    pub fn kind(&self) -> ConstraintKind {
        match self {
            Self::MinDistance { .. } => ConstraintKind::MinDistance,
            Self::MaxDistance { .. } => ConstraintKind::MaxDistance,
            Self::ZoneContainment { .. } => ConstraintKind::ZoneContainment,
        }
    }

    /// Re-checks invariants, for constraints that arrived through serde.
    pub fn validate(&self) -> Result<(), SceneError> {
        match self {
            Self::MinDistance { threshold, .. } | Self::MaxDistance { threshold, .. } => check_threshold(*threshold),
            Self::ZoneContainment { zone, .. } if zone.trim().is_empty() => {
                Err(SceneError::InvalidConstraint("empty zone".into()))
            }
            Self::ZoneContainment { .. } => Ok(()),
        }
    }
}

fn check_threshold(threshold: f64) -> Result<(), SceneError> {
    if threshold.is_finite() && threshold > 0.0 {
        Ok(())
    } else {
        Err(SceneError::InvalidConstraint(format!(
            "distance threshold must be finite and positive, got {threshold}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum MeasuredValue {
    Distance(f64),
    Zone(Option<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// Position of the violated constraint in the input list.
    pub constraint: usize,
    pub kind: ConstraintKind,
    pub subject: String,
    pub object: Option<String>,
    pub measured: MeasuredValue,
    pub threshold: String,
}

impl SceneGraph {
    /// Returns one violation per offending pair (distance kinds) or entity
    /// (zone containment). Constraint order, then subject id, then object id.
    pub fn check_constraints(&self, constraints: &[SpatialConstraint]) -> Vec<Violation> {
        let mut out = Vec::new();
        for (ci, c) in constraints.iter().enumerate() {
            match c {
                SpatialConstraint::MinDistance { subject, object, threshold } => {
                    self.pair_violations(ci, c.kind(), subject, object, *threshold, |d, t| d < t, &mut out)
                }
                SpatialConstraint::MaxDistance { subject, object, threshold } => {
                    self.pair_violations(ci, c.kind(), subject, object, *threshold, |d, t| d > t, &mut out)
                }
                SpatialConstraint::ZoneContainment { subject, zone } => {
                    let subject = normalize_label(subject);
                    let mut hits: Vec<_> = self
                        .entities_labeled(&subject)
                        .filter(|e| e.zone.as_deref() != Some(zone.as_str()))
                        .map(|e| Violation {
                            constraint: ci,
                            kind: ConstraintKind::ZoneContainment,
                            subject: e.id.clone(),
                            object: None,
                            measured: MeasuredValue::Zone(e.zone.clone()),
                            threshold: zone.clone(),
                        })
                        .collect();
                    hits.sort_by(|a, b| a.subject.cmp(&b.subject));
                    out.extend(hits);
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn pair_violations(
        &self,
        ci: usize,
        kind: ConstraintKind,
        subject: &str,
        object: &str,
        threshold: f64,
        violates: impl Fn(f64, f64) -> bool,
        out: &mut Vec<Violation>,
    ) {
        let subject = normalize_label(subject);
        let object = normalize_label(object);
        let same_label = subject == object;
        let mut hits = Vec::new();
        for s in self.entities_labeled(&subject) {
            for o in self.entities_labeled(&object) {
                // same-label constraints consider each unordered pair once
                if s.id == o.id || (same_label && s.id > o.id) {
                    continue;
                }
                let d = euclidean(s.pos, o.pos);
                if violates(d, threshold) {
                    hits.push(Violation {
                        constraint: ci,
                        kind,
                        subject: s.id.clone(),
                        object: Some(o.id.clone()),
                        measured: MeasuredValue::Distance(d),
                        threshold: format!("{threshold}"),
                    });
                }
            }
        }
        hits.sort_by(|a, b| (&a.subject, &a.object).cmp(&(&b.subject, &b.object)));
        out.extend(hits);
    }
}
