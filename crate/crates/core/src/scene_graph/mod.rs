//! Spatial scene graphs built from entity manifests, with deterministic
//! geometric queries and a canonical textual fact sheet.

mod constraints;
mod facts;
mod graph;
mod manifest;

pub use constraints::{ConstraintKind, MeasuredValue, SpatialConstraint, Violation};
pub use facts::FactSheet;
pub use graph::{CountDiscrepancy, SceneGraph, SpatialEntity, SpatialRelation, NEAREST_NEIGHBORS};
pub use manifest::{parse_entity_manifest, EntityManifest, ManifestEntry};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("malformed manifest at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("invalid position at line {line}: {text}")]
    InvalidPosition { line: usize, text: String },
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("radius must be non-negative, got {0}")]
    NegativeRadius(f64),
    #[error("metric query requires a units-per-meter scale on the graph")]
    MissingScale,
    #[error("invalid scale {0}: must be finite and positive")]
    InvalidScale(f64),
    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),
}

/// Lowercase, trim, and collapse internal whitespace runs to one space.
pub fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Builds a graph from a parsed manifest.
pub fn build_graph(manifest: &EntityManifest) -> SceneGraph {
    SceneGraph::from_manifest(manifest)
}

#[cfg(test)]
mod tests {
    use super::normalize_label;

    #[test]
    fn label_normalization() {
        assert_eq!(normalize_label("  Fire   Extinguisher "), "fire extinguisher");
        assert_eq!(normalize_label("Box"), "box");
        // plural is kept distinct
        assert_ne!(normalize_label("boxes"), normalize_label("box"));
        assert_eq!(normalize_label("   "), "");
    }
}
