use pyo3::ffi::c_str;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use pyo3::wrap_pymodule;

fn with_module(code: &std::ffi::CStr) {
    Python::initialize();
    Python::attach(|py| {
        let globals = PyDict::new(py);
        globals.set_item("ems", wrap_pymodule!(ems::ems)(py)).unwrap();
        if let Err(e) = py.run(code, Some(&globals), None) {
            panic!("python check failed: {e}\n{}", e.traceback(py).and_then(|t| t.format().ok()).unwrap_or_default());
        }
    });
}

#[test]
fn corpus_and_masks_from_python() {
    with_module(c_str!(
        r#"
records = ems.generate_corpus(utterances_per_emotion=1, seed=2, min_duration=0.4, max_duration=0.5)
assert len(records) == 4
seq = records[0]
scores = ems.heuristic_intensity(seq)
assert len(scores) == len(seq)
plan = ems.ems_mask_plan(scores, k_percent=20.0, span=1, seed=1)
assert len(plan.indices) == ems.mask_budget(len(scores), 20.0)
ranked = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
assert sorted(ranked[:len(plan.indices)]) == plan.indices
assert ems.MaskPlan.from_json(plan.to_json()) == plan
z, r, k = plan.action_counts()
assert z + r + k == len(plan.indices)
"#
    ));
}

#[test]
fn numeric_helpers_and_errors_from_python() {
    with_module(c_str!(
        r#"
assert [row[0] for row in ems.build_kernel_mask(5, 1)] == [1.0, 0.0, 0.0, 1.0, 1.0]
idx, q = ems.vq_quantize([[2.0, 2.0]], [[0.0, 0.0], [2.5, 2.0]])
assert idx == [1] and q == [[2.5, 2.0]]
try:
    ems.build_kernel_mask(3, 3)
    raise AssertionError("expected an error")
except ems.EmsError:
    pass
try:
    ems.vq_quantize([[1.0], [1.0, 2.0]], [[0.0]])
    raise AssertionError("expected an error")
except ValueError:
    pass
"#
    ));
}

#[test]
fn pretrain_from_python_logs_additive_losses() {
    with_module(c_str!(
        r#"
records = ems.generate_corpus(utterances_per_emotion=2, seed=0, min_duration=0.5, max_duration=0.6)
cfg = "steps = 2\nbatch_size = 2\ncrop_frames = 20\n[model.transformer]\nlayers = 1\nd_model = 8\nheads = 2\nff_dim = 8\npositional_encoding = true\n"
metrics = ems.pretrain(records, cfg)
assert [m["step"] for m in metrics] == [1, 2]
assert all(abs(m["total"] - m["l_score"] - m["l_joint_input"]) < 1e-9 for m in metrics)
try:
    ems.pretrain(records, "no_such_key = 1")
    raise AssertionError("expected a config error")
except ems.EmsError as e:
    assert "no_such_key" in str(e)
"#
    ));
}
