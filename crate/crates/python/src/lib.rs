//! Python bindings. Structured results cross the boundary as plain dicts and
//! lists built from the core types' JSON form.

use std::path::PathBuf;

use atlas_core::grading::{self, ScoringSpec};
use atlas_core::leak_audit::{run_audit, LeakRegistry, Table, TabularDataset};
use atlas_core::orchestrator::classify_error as classify;
use atlas_core::router::{self, AnswerDistribution, Tier, TierTable};
use atlas_core::scene_graph::{self, SpatialConstraint};
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyString;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Serializes through JSON so Python sees ordinary dicts, lists and numbers.
fn to_py<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(value_error)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Accepts either a JSON string or any `json.dumps`-able object.
fn from_py<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = if obj.is_instance_of::<PyString>() {
        obj.extract()?
    } else {
        obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?
    };
    serde_json::from_str(&text).map_err(value_error)
}

/// Grades a prediction. Returns `{"score": 0|1, "detail": str}`; a spec the
/// grader cannot apply raises ValueError.
#[pyfunction]
fn grade<'py>(py: Python<'py>, spec: &Bound<'py, PyAny>, pred: &str) -> PyResult<Bound<'py, PyAny>> {
    let spec: ScoringSpec = from_py(spec)?;
    let r = grading::grade(&spec, pred).map_err(|e| value_error(format!("{}: {e}", e.kind())))?;
    to_py(py, &serde_json::json!({"score": r.score(), "detail": r.detail}))
}

/// Shannon entropy in bits of `[(answer, probability), ...]`.
#[pyfunction]
fn answer_entropy(dist: Vec<(String, f64)>) -> PyResult<f64> {
    let d = AnswerDistribution::new(dist).map_err(value_error)?;
    Ok(router::answer_entropy(&d))
}

/// Cost of one call at the default per-million-token rates.
#[pyfunction]
fn call_cost(tier: &str, input_tokens: u64, output_tokens: u64) -> PyResult<f64> {
    let tier: Tier = serde_json::from_value(serde_json::Value::from(tier.to_ascii_lowercase()))
        .map_err(|_| value_error(format!("unknown tier {tier:?}; expected fast, standard or strong")))?;
    Ok(TierTable::default().get(tier).cost(input_tokens, output_tokens))
}

/// Error class name for a failed run's stderr, e.g. "import-error".
#[pyfunction]
fn classify_error(stderr: &str) -> &'static str {
    classify(stderr).name()
}

/// Runs all leak checks on a train/test CSV pair.
#[pyfunction]
#[pyo3(signature = (train, test, target=None, time_column=None, competition=""))]
fn audit<'py>(
    py: Python<'py>,
    train: PathBuf,
    test: PathBuf,
    target: Option<String>,
    time_column: Option<String>,
    competition: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let load = |p: &PathBuf| Table::from_csv_path(p).map_err(|e| value_error(format!("{}: {e}", p.display())));
    let data = TabularDataset::new(load(&train)?, load(&test)?, target, time_column).map_err(value_error)?;
    let report = py.detach(|| run_audit(&data, None, competition, LeakRegistry::builtin()));
    to_py(
        py,
        &serde_json::json!({
            "findings": report.findings,
            "matchedHint": report.matched_hint,
            "preamble": report.preamble,
        }),
    )
}

#[pyclass(frozen, module = "pyatlas")]
struct SceneGraph {
    inner: scene_graph::SceneGraph,
}

#[pymethods]
impl SceneGraph {
    #[new]
    #[pyo3(signature = (manifest, units_per_meter=None))]
    fn new(manifest: &str, units_per_meter: Option<f64>) -> PyResult<Self> {
        let mut g = scene_graph::build_graph(&scene_graph::parse_entity_manifest(manifest).map_err(value_error)?);
        if let Some(s) = units_per_meter {
            g = g.with_scale(s).map_err(value_error)?;
        }
        Ok(Self { inner: g })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("SceneGraph(entities={}, relations={})", self.inner.len(), self.inner.relations().len())
    }

    fn ids(&self) -> Vec<String> {
        self.inner.entities().iter().map(|e| e.id.clone()).collect()
    }

    fn entity<'py>(&self, py: Python<'py>, id: &str) -> PyResult<Bound<'py, PyAny>> {
        let e = self.inner.entity(id).map_err(|e| PyKeyError::new_err(e.to_string()))?;
        to_py(py, e)
    }

    fn distance(&self, a: &str, b: &str) -> PyResult<f64> {
        self.inner.distance(a, b).map_err(|e| PyKeyError::new_err(e.to_string()))
    }

    /// `[(id, distance)]` within `radius` of `center`, nearest first. With
    /// `meters=True` the radius is in meters and distances are too.
    #[pyo3(signature = (center, radius, meters=false))]
    fn query_near(&self, center: &str, radius: f64, meters: bool) -> PyResult<Vec<(String, f64)>> {
        let (radius, factor) = match (meters, self.inner.scale()) {
            (false, _) => (radius, 1.0),
            (true, Some(s)) => (radius * s, s),
            (true, None) => return Err(value_error("meters=True needs units_per_meter")),
        };
        let hits = self.inner.query_near_with_distance(center, radius).map_err(|e| PyKeyError::new_err(e.to_string()))?;
        Ok(hits.into_iter().map(|(e, d)| (e.id.clone(), d / factor)).collect())
    }

    fn count_by_label(&self, label: &str) -> usize {
        self.inner.count_by_label(label)
    }

    /// Constraints as dicts or a JSON string; returns violation dicts.
    fn check_constraints<'py>(&self, py: Python<'py>, constraints: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let cs: Vec<SpatialConstraint> = from_py(constraints)?;
        for c in &cs {
            c.validate().map_err(value_error)?;
        }
        to_py(py, &self.inner.check_constraints(&cs))
    }

    fn fact_sheet(&self) -> String {
        self.inner.to_fact_sheet().render()
    }
}

#[pymodule]
pub fn pyatlas(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<SceneGraph>()?;
    m.add_function(wrap_pyfunction!(grade, m)?)?;
    m.add_function(wrap_pyfunction!(answer_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(call_cost, m)?)?;
    m.add_function(wrap_pyfunction!(classify_error, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
