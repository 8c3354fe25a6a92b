use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::graph::SceneGraph;

/// Canonical textual summary of a scene graph, handed to language models as
/// computed facts.
///
/// Line order: header, entity lines sorted by id, count lines sorted by
/// label, distance lines sorted by (subject, object). Distances carry one
/// decimal place.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FactSheet {
    pub lines: Vec<String>,
    /// Entity id -> index into `lines`.
    pub entity_index: BTreeMap<String, usize>,
}

impl FactSheet {
    pub fn from_graph(graph: &SceneGraph) -> Self {
        let mut lines = Vec::new();
        let mut entity_index = BTreeMap::new();

        let mut header = format!(
            "scene facts: {} entities, {} relations",
            graph.len(),
            graph.relations().len()
        );
        if let Some(scale) = graph.scale() {
            header.push_str(&format!(", {scale} units per meter"));
        }
        lines.push(header);

        let mut entities: Vec<_> = graph.entities().iter().collect();
        entities.sort_by(|a, b| a.id.cmp(&b.id));
        for e in entities {
            let attrs = e
                .attrs
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(", ");
            entity_index.insert(e.id.clone(), lines.len());
            lines.push(format!(
                "entity {}: label={} pos=({:.1}, {:.1}) zone={} attrs={{{}}}",
                e.id,
                e.label,
                e.pos[0],
                e.pos[1],
                e.zone.as_deref().unwrap_or("none"),
                attrs
            ));
        }

        let detector: BTreeMap<&str, u32> = graph
            .diagnostics()
            .iter()
            .map(|d| (d.label.as_str(), d.detector_count))
            .collect();
        for (label, n) in graph.label_counts() {
            match detector.get(label) {
                Some(det) => lines.push(format!("count {label}: {n} (detector reported {det})")),
                None => lines.push(format!("count {label}: {n}")),
            }
        }

        for r in graph.relations() {
            let mut line = format!("distance {} -- {}: {:.1}", r.subject, r.object, r.distance);
            if let Some(scale) = graph.scale() {
                line.push_str(&format!(" ({:.1} m)", r.distance / scale));
            }
            lines.push(line);
        }

        Self { lines, entity_index }
    }

    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for FactSheet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for line in &self.lines {
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

impl SceneGraph {
    pub fn to_fact_sheet(&self) -> FactSheet {
        FactSheet::from_graph(self)
    }
}
