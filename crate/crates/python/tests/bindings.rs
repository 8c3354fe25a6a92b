use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module(code: &std::ffi::CStr) -> PyResult<()> {
    Python::initialize();
    Python::attach(|py| {
        let globals = PyDict::new(py);
        globals.set_item("pyatlas", pyo3::wrap_pymodule!(pyatlas::pyatlas)(py))?;
        py.run(code, Some(&globals), None)
    })
}

#[test]
fn scene_graph_from_python() {
    with_module(
        c"g = pyatlas.SceneGraph('entities:\\n  pallet @ (0, 0)\\n  exit @ (3, 4)\\n')
assert len(g) == 2
assert g.distance('pallet-1', 'exit-1') == 5.0
assert g.query_near('exit-1', 5.0) == [('pallet-1', 5.0)]
try:
    g.query_near('exit-1', 1.0, meters=True)
    raise AssertionError('meters without a scale must fail')
except ValueError:
    pass
",
    )
    .unwrap();
}

#[test]
fn grading_and_costs_from_python() {
    with_module(
        c"assert pyatlas.grade({'function': 'fuzzy_match', 'gold': 'three pallets', 'threshold': 0.5}, 'three pallets')['score'] == 1
assert pyatlas.call_cost('FAST', 1000000, 0) == 0.4
assert pyatlas.answer_entropy([('a', 1.0)]) == 0.0
try:
    pyatlas.call_cost('huge', 1, 1)
    raise AssertionError('unknown tier must fail')
except ValueError:
    pass
",
    )
    .unwrap();
}
