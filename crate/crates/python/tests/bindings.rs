use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::PyDict;

fn run_python(code: &str) {
    static INIT: std::sync::Once = std::sync::Once::new();
    INIT.call_once(|| {
        pyo3::append_to_inittab!(lorp_module);
        Python::initialize();
    });
    Python::attach(|py| {
        let globals = PyDict::new(py);
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.display(py);
            panic!("python snippet failed: {e}");
        }
    });
}

#[pymodule]
#[pyo3(name = "lorp")]
mod lorp_module {
    use pyo3::prelude::*;

    #[pymodule_init]
    fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
        lorp::lorp(m)
    }
}

#[test]
fn module_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("planted.ladf");
    let saved = dir.path().join("matrix.json");
    run_python(&format!(
        r#"
import lorp
spec = {{"n_layers": 10, "d_model": 16,
        "cluster_layout": [[1, 2, 3, 4, 5], [6, 7, 8, 9, 10]],
        "within_similarity": 0.9, "cross_similarity": 0.05, "seed": 4}}
size = lorp.generate_dump(spec, {dump:?}, samples=3, tokens=16)
assert size == 20 + 3 * (4 + 16 * 10 * 16 * 4), size
assert lorp.read_dump_header({dump:?}) == (10, 16)

s = lorp.similarity_from_dumps([{dump:?}])
assert s.n_layers == 10 and s.token_total == 48
assert abs(s[0, 0] - 1.0) < 1e-6
assert all(c["passed"] for c in s.check())
s.save({saved:?})
assert lorp.SimilarityMatrix.load({saved:?}).digest() == s.digest()

report = lorp.locality(s)
assert report["recommended_k"] == lorp.recommend_k(report["rls"])
assert lorp.spectral_cluster(s, 2) == [1] * 5 + [2] * 5

plan = lorp.plan(s, 3)
assert plan["k_clusters"] == 2
assert len(plan["pruned_layers_0based"]) == 3
assert [l - 1 for l in plan["pruned_layers_1based"]] == plan["pruned_layers_0based"]
window = lorp.plan(s, 3, method="contiguous")
assert window["method"] == "contiguous"

closed = lorp.generate_similarity(spec)
assert abs(closed[0, 1] - 0.9) < 1e-12 and abs(closed[0, 9] - 0.05) < 1e-12

try:
    lorp.plan(s, 0)
    raise AssertionError("budget 0 accepted")
except ValueError:
    pass
try:
    lorp.SimilarityMatrix([[1.0, 2.0], [2.0, 1.0]])
    raise AssertionError("unbounded matrix accepted")
except lorp.FormatError:
    pass
assert issubclass(lorp.ComputationError, lorp.LorpError)
"#
    ));
}

#[test]
fn write_dump_validates_chunks() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("manual.ladf");
    run_python(&format!(
        r#"
import lorp
token = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0]
assert lorp.write_dump({dump:?}, 3, 2, [token * 2, token]) == 20 + (4 + 48) + (4 + 24)
s = lorp.similarity_from_dumps([{dump:?}], epsilon=0.0)
assert s.token_total == 3
assert abs(s[0, 1]) < 1e-12
assert abs(s[0, 2] - 2 ** -0.5) < 1e-7
try:
    lorp.write_dump({dump:?}, 3, 2, [token[:-1]])
    raise AssertionError("ragged chunk accepted")
except ValueError:
    pass
"#
    ));
}
