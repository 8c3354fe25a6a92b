use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::manifest::EntityManifest;
use super::{normalize_label, SceneError};

/// Each entity gets edges to this many nearest neighbours.
pub const NEAREST_NEIGHBORS: usize = 3;

const NEAR_PREDICATE: &str = "near";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialEntity {
    pub id: String,
    pub label: String,
    pub pos: [f64; 2],
    pub attrs: BTreeMap<String, String>,
    pub zone: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialRelation {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub distance: f64,
}

/// A label whose detector count disagreed with the number of described
/// entities. The graph count is authoritative for queries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CountDiscrepancy {
    pub label: String,
    pub graph_count: usize,
    pub detector_count: u32,
}

/// Immutable spatial scene graph. All queries take `&self`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneGraph {
    entities: Vec<SpatialEntity>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
    relations: Vec<SpatialRelation>,
    scale: Option<f64>,
    diagnostics: Vec<CountDiscrepancy>,
}

pub(crate) fn euclidean(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

fn id_stem(label: &str) -> String {
    label.replace(' ', "_")
}

impl SceneGraph {
    pub fn from_manifest(manifest: &EntityManifest) -> Self {
        let mut counters: BTreeMap<String, usize> = BTreeMap::new();
        let mut entities = Vec::with_capacity(manifest.entries.len());
        let mut index = BTreeMap::new();

        for entry in &manifest.entries {
            let label = normalize_label(&entry.label);
            let k = counters.entry(label.clone()).or_insert(0);
            *k += 1;
            let id = format!("{}-{}", id_stem(&label), k);
            index.insert(id.clone(), entities.len());
            entities.push(SpatialEntity {
                id,
                label,
                pos: entry.pos,
                attrs: entry.attrs.clone(),
                zone: entry.zone.clone(),
            });
        }

        let relations = materialize_relations(&entities);

        let diagnostics = manifest
            .detector_counts
            .iter()
            .filter_map(|(label, &detected)| {
                let graph_count = counters.get(label).copied().unwrap_or(0);
                (graph_count != detected as usize).then(|| CountDiscrepancy {
                    label: label.clone(),
                    graph_count,
                    detector_count: detected,
                })
            })
            .collect();

        Self {
            entities,
            index,
            relations,
            scale: None,
            diagnostics,
        }
    }

    /// Attaches a units-per-meter factor used by metric queries.
    pub fn with_scale(mut self, units_per_meter: f64) -> Result<Self, SceneError> {
        if !(units_per_meter.is_finite() && units_per_meter > 0.0) {
            return Err(SceneError::InvalidScale(units_per_meter));
        }
        self.scale = Some(units_per_meter);
        Ok(self)
    }

    pub fn scale(&self) -> Option<f64> {
        self.scale
    }

    pub fn entities(&self) -> &[SpatialEntity] {
        &self.entities
    }

    pub fn relations(&self) -> &[SpatialRelation] {
        &self.relations
    }

    pub fn diagnostics(&self) -> &[CountDiscrepancy] {
        &self.diagnostics
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn entity(&self, id: &str) -> Result<&SpatialEntity, SceneError> {
        self.index
            .get(id)
            .map(|&i| &self.entities[i])
            .ok_or_else(|| SceneError::UnknownEntity(id.to_string()))
    }

    pub fn distance(&self, a: &str, b: &str) -> Result<f64, SceneError> {
        let a = self.entity(a)?;
        let b = self.entity(b)?;
        Ok(euclidean(a.pos, b.pos))
    }

    /// Entities within `radius` (inclusive) of `center`, nearest first, ties
    /// by id. The center itself is never returned.
    pub fn query_near(&self, center: &str, radius: f64) -> Result<Vec<&SpatialEntity>, SceneError> {
        Ok(self
            .query_near_with_distance(center, radius)?
            .into_iter()
            .map(|(e, _)| e)
            .collect())
    }

    pub fn query_near_with_distance(
        &self,
        center: &str,
        radius: f64,
    ) -> Result<Vec<(&SpatialEntity, f64)>, SceneError> {
        if radius.is_nan() || radius < 0.0 {
            return Err(SceneError::NegativeRadius(radius));
        }
        let c = self.entity(center)?;
        let mut hits: Vec<(&SpatialEntity, f64)> = self
            .entities
            .iter()
            .filter(|e| e.id != c.id)
            .map(|e| (e, euclidean(c.pos, e.pos)))
            .filter(|&(_, d)| d <= radius)
            .collect();
        hits.sort_by(|(ea, da), (eb, db)| da.total_cmp(db).then_with(|| ea.id.cmp(&eb.id)));
        Ok(hits)
    }

    /// Radius query where the radius is given in meters.
    pub fn query_near_meters(&self, center: &str, meters: f64) -> Result<Vec<&SpatialEntity>, SceneError> {
        let scale = self.scale.ok_or(SceneError::MissingScale)?;
        self.query_near(center, meters * scale)
    }

    pub fn count_by_label(&self, label: &str) -> usize {
        let wanted = normalize_label(label);
        self.entities.iter().filter(|e| e.label == wanted).count()
    }

    /// Distinct labels with their counts, sorted by label.
    pub fn label_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entities {
            *counts.entry(e.label.as_str()).or_insert(0) += 1;
        }
        counts
    }

    pub(crate) fn entities_labeled<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a SpatialEntity> + 'a {
        self.entities.iter().filter(move |e| e.label == label)
    }
}

fn materialize_relations(entities: &[SpatialEntity]) -> Vec<SpatialRelation> {
    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (i, e) in entities.iter().enumerate() {
        let mut others: Vec<(usize, f64)> = entities
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, o)| (j, euclidean(e.pos, o.pos)))
            .collect();
        others.sort_by(|(ja, da), (jb, db)| {
            da.total_cmp(db)
                .then_with(|| entities[*ja].id.cmp(&entities[*jb].id))
        });
        for &(j, _) in others.iter().take(NEAREST_NEIGHBORS) {
            // store each unordered pair once, subject id < object id
            let (a, b) = if entities[i].id < entities[j].id { (i, j) } else { (j, i) };
            pairs.insert((a, b));
        }
    }
    let mut relations: Vec<SpatialRelation> = pairs
        .into_iter()
        .map(|(a, b)| SpatialRelation {
            subject: entities[a].id.clone(),
            predicate: NEAR_PREDICATE.to_string(),
            object: entities[b].id.clone(),
            distance: euclidean(entities[a].pos, entities[b].pos),
        })
        .collect();
    relations.sort_by(|x, y| (&x.subject, &x.object).cmp(&(&y.subject, &y.object)));
    relations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_graph::{build_graph, parse_entity_manifest};

    fn graph(doc: &str) -> SceneGraph {
        build_graph(&parse_entity_manifest(doc).unwrap())
    }

    #[test]
    fn ids_follow_first_appearance() {
        let g = graph("entities:\n pallet @ (0,0)\n exit @ (1,0)\n");
        let ids: Vec<_> = g.entities().iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["pallet-1", "exit-1"]);

        let g = graph("entities:\n box @ (0,0)\n Box @ (1,0)\n BOX @ (2,0)\n");
        let ids: Vec<_> = g.entities().iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["box-1", "box-2", "box-3"]);

        let g = graph("entities:\n fire extinguisher @ (0,0)\n");
        assert_eq!(g.entities()[0].id, "fire_extinguisher-1");
    }

    #[test]
    fn empty_manifest_gives_empty_graph() {
        let g = graph("entities:\n");
        assert!(g.is_empty());
        assert!(g.relations().is_empty());
    }

    #[test]
    fn distances() {
        let g = graph("entities:\n a @ (0,0)\n b @ (3,4)\n c @ (1,1)\n d @ (4,5)\n e @ (3,4)\n");
        assert_eq!(g.distance("a-1", "b-1").unwrap(), 5.0);
        assert_eq!(g.distance("c-1", "d-1").unwrap(), 5.0);
        assert_eq!(g.distance("b-1", "e-1").unwrap(), 0.0);
        assert_eq!(g.distance("a-1", "zz-1"), Err(SceneError::UnknownEntity("zz-1".into())));
    }

    #[test]
    fn query_near_boundary_and_order() {
        let g = graph("entities:\n v @ (0,0)\n x @ (3,4)\n");
        assert_eq!(g.query_near("v-1", 5.0).unwrap().len(), 1);
        assert!(g.query_near("v-1", 0.0).unwrap().is_empty());

        let g = graph("entities:\n v @ (0,0)\n far @ (6,0)\n mid @ (0,2)\n close @ (1,0)\n");
        let ids: Vec<_> = g.query_near("v-1", 3.0).unwrap().iter().map(|e| e.id.clone()).collect();
        assert_eq!(ids, ["close-1", "mid-1"]);

        let g = graph("entities:\n v @ (0,0)\n b @ (0,1)\n a @ (1,0)\n");
        let ids: Vec<_> = g.query_near("v-1", 1.0).unwrap().iter().map(|e| e.id.clone()).collect();
        assert_eq!(ids, ["a-1", "b-1"]);
    }

    #[test]
    fn query_near_errors() {
        let g = graph("entities:\n v @ (0,0)\n");
        assert_eq!(g.query_near("v-1", -1.0), Err(SceneError::NegativeRadius(-1.0)));
        assert!(matches!(g.query_near("nope", 1.0), Err(SceneError::UnknownEntity(_))));
        assert_eq!(g.query_near_meters("v-1", 3.0), Err(SceneError::MissingScale));
    }

    #[test]
    fn metric_queries_use_scale() {
        let g = graph("entities:\n exit @ (0,0)\n pallet @ (25,0)\n pallet @ (35,0)\n")
            .with_scale(10.0)
            .unwrap();
        assert_eq!(g.query_near_meters("exit-1", 3.0).unwrap().len(), 1);
        assert!(matches!(
            graph("entities:\n").with_scale(0.0),
            Err(SceneError::InvalidScale(_))
        ));
    }

    #[test]
    fn counts_and_diagnostics() {
        let g = graph("entities:\n pallet @ (0,0)\n pallet @ (1,0)\n exit @ (2,0)\ncounts:\n pallet: 3\n exit: 1\n forklift: 1\n");
        assert_eq!(g.count_by_label("pallet"), 2);
        assert_eq!(g.count_by_label(" PALLET "), 2);
        assert_eq!(g.count_by_label("exit"), 1);
        assert_eq!(g.count_by_label("pallets"), 0);
        assert_eq!(
            g.diagnostics(),
            &[
                CountDiscrepancy { label: "forklift".into(), graph_count: 0, detector_count: 1 },
                CountDiscrepancy { label: "pallet".into(), graph_count: 2, detector_count: 3 },
            ]
        );
        assert_eq!(graph("entities:\n").count_by_label("box"), 0);
    }

    #[test]
    fn relations_are_k_nearest_unordered_pairs() {
        // five points on a line, unit spacing
        let g = graph("entities:\n p @ (0,0)\n p @ (1,0)\n p @ (2,0)\n p @ (3,0)\n p @ (4,0)\n");
        let pairs: Vec<_> = g
            .relations()
            .iter()
            .map(|r| (r.subject.as_str(), r.object.as_str(), r.distance))
            .collect();
        // distance ties break by id, so p-3 picks p-1 over p-5
        assert_eq!(
            pairs,
            [
                ("p-1", "p-2", 1.0),
                ("p-1", "p-3", 2.0),
                ("p-1", "p-4", 3.0),
                ("p-2", "p-3", 1.0),
                ("p-2", "p-4", 2.0),
                ("p-2", "p-5", 3.0),
                ("p-3", "p-4", 1.0),
                ("p-3", "p-5", 2.0),
                ("p-4", "p-5", 1.0),
            ]
        );
        for r in g.relations() {
            assert_ne!(r.subject, r.object);
            assert_eq!(r.distance, g.distance(&r.subject, &r.object).unwrap());
        }
    }
}
