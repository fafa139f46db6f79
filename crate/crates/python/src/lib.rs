//! Python bindings: corpus generation, intensity scores, mask plans, kernel
//! masks, vector quantization, pre-training and the command-line entry point.

use std::path::PathBuf;

use ems_core::corpus::{self, CorpusConfig, Emotion};
use ems_core::intensity::{self, IntensitySource, IntensityTrack};
use ems_core::masking::{self, ActionRatios, MaskAction, MaskConfig, TieRule};
use ems_core::training::{self, PretrainData, PretrainOptions, TrainConfig};
use ems_core::{models, stats, EmsError};
use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(ems, EmsException, PyException, "Raised for any error reported by the library.");

fn err(e: EmsError) -> PyErr {
    EmsException::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, width), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn emotion(name: &str) -> PyResult<Emotion> {
    Emotion::ALL
        .into_iter()
        .find(|e| e.as_str() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown emotion {name:?}")))
}

/// One utterance as log-mel frames with its intensity ground truth.
#[pyclass(name = "FeatureSequence", module = "ems", frozen)]
pub struct PyFeatureSequence {
    inner: corpus::FeatureSequence,
}

#[pymethods]
impl PyFeatureSequence {
    #[new]
    #[pyo3(signature = (frames, truth_intensity, frame_units, emotion_name, utterance_id, frame_rate = 100.0))]
    fn new(
        frames: Vec<Vec<f64>>,
        truth_intensity: Vec<f64>,
        frame_units: Vec<u32>,
        emotion_name: &str,
        utterance_id: String,
        frame_rate: f64,
    ) -> PyResult<Self> {
        let frames = matrix(frames)?;
        let t = frames.nrows();
        if truth_intensity.len() != t || frame_units.len() != t {
            return Err(PyValueError::new_err("truth_intensity and frame_units need one value per frame"));
        }
        Ok(Self {
            inner: corpus::FeatureSequence {
                frames,
                frame_rate,
                truth_frame_intensity: truth_intensity,
                frame_units,
                emotion: emotion(emotion_name)?,
                utterance_id,
            },
        })
    }

    #[getter]
    fn frames(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.frames)
    }

    #[getter]
    fn truth_intensity(&self) -> Vec<f64> {
        self.inner.truth_frame_intensity.clone()
    }

    #[getter]
    fn frame_units(&self) -> Vec<u32> {
        self.inner.frame_units.clone()
    }

    #[getter]
    fn emotion(&self) -> &'static str {
        self.inner.emotion.as_str()
    }

    #[getter]
    fn utterance_id(&self) -> String {
        self.inner.utterance_id.clone()
    }

    #[getter]
    fn frame_rate(&self) -> f64 {
        self.inner.frame_rate
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "FeatureSequence(id={:?}, emotion={}, frames={}x{})",
            self.inner.utterance_id,
            self.inner.emotion.as_str(),
            self.inner.frames.nrows(),
            self.inner.frames.ncols()
        )
    }
}

/// Masked positions of one sequence and the action applied to each.
#[pyclass(name = "MaskPlan", module = "ems", frozen)]
pub struct PyMaskPlan {
    inner: masking::MaskPlan,
}

#[pymethods]
impl PyMaskPlan {
    /// Sorted masked frame indices.
    #[getter]
    fn indices(&self) -> Vec<usize> {
        self.inner.masked_indices()
    }

    /// `(index, action, source)` per masked frame; `source` is set for replacements.
    #[getter]
    fn entries(&self) -> Vec<(usize, &'static str, Option<usize>)> {
        self.inner
            .entries()
            .iter()
            .map(|e| match e.action {
                MaskAction::Zero => (e.index, "zero", None),
                MaskAction::Replace { source } => (e.index, "replace", Some(source)),
                MaskAction::Keep => (e.index, "keep", None),
            })
            .collect()
    }

    fn action_counts(&self) -> (usize, usize, usize) {
        self.inner.action_counts()
    }

    /// Applies the plan to a `T×d` frame matrix.
    fn apply(&self, frames: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&masking::apply_mask_plan(&matrix(frames)?, &self.inner).map_err(err)?))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(|inner| Self { inner }).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

/// Generates a class-balanced synthetic corpus.
#[pyfunction]
#[pyo3(signature = (utterances_per_emotion = 150, seed = 0, min_duration = 1.0, max_duration = 1.4))]
fn generate_corpus(
    utterances_per_emotion: usize,
    seed: u64,
    min_duration: f64,
    max_duration: f64,
) -> PyResult<Vec<PyFeatureSequence>> {
    let cfg = CorpusConfig { seed, utterances_per_emotion, min_duration, max_duration, ..CorpusConfig::default() };
    Ok(corpus::generate_corpus(&cfg).map_err(err)?.into_iter().map(|inner| PyFeatureSequence { inner }).collect())
}

fn unwrap_records(records: &[PyRef<'_, PyFeatureSequence>]) -> Vec<corpus::FeatureSequence> {
    records.iter().map(|r| r.inner.clone()).collect()
}

#[pyfunction]
fn write_corpus(records: Vec<PyRef<'_, PyFeatureSequence>>, directory: PathBuf) -> PyResult<usize> {
    Ok(corpus::write_corpus(&unwrap_records(&records), &directory).map_err(err)?.records.len())
}

#[pyfunction]
fn read_corpus(directory: PathBuf) -> PyResult<Vec<PyFeatureSequence>> {
    Ok(corpus::read_corpus(&directory).map_err(err)?.into_iter().map(|inner| PyFeatureSequence { inner }).collect())
}

/// Normalized frame-energy intensity track in `[0, 1]`.
#[pyfunction]
fn heuristic_intensity(sequence: PyRef<'_, PyFeatureSequence>) -> Vec<f64> {
    intensity::heuristic_intensity(&sequence.inner).scores
}

#[pyfunction]
fn spearman(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    if a.len() != b.len() {
        return Err(PyValueError::new_err("sequences differ in length"));
    }
    Ok(stats::spearman(&a, &b))
}

#[pyfunction]
fn mask_budget(t: usize, k_percent: f64) -> usize {
    masking::mask_budget(t, k_percent)
}

fn ratios(zero: f64, replace: f64, keep: f64) -> PyResult<ActionRatios> {
    let r = ActionRatios { zero, replace, keep };
    r.validate().map_err(err)?;
    Ok(r)
}

/// Masks the top-`k_percent` frames by intensity, extended into spans.
#[pyfunction]
#[pyo3(signature = (scores, k_percent = 25.0, span = 1, seed = 0, ratios = (0.8, 0.1, 0.1)))]
fn ems_mask_plan(
    scores: Vec<f64>,
    k_percent: f64,
    span: usize,
    seed: u64,
    ratios: (f64, f64, f64),
) -> PyResult<PyMaskPlan> {
    let cfg = MaskConfig {
        k_percent,
        span,
        action_ratios: self::ratios(ratios.0, ratios.1, ratios.2)?,
        tie_rule: TieRule::LowerIndexFirst,
        seed,
    };
    Ok(PyMaskPlan { inner: masking::ems_mask_plan(&scores, &cfg).map_err(err)? })
}

/// Masks uniformly drawn spans covering `k_percent` of `t` frames.
#[pyfunction]
#[pyo3(signature = (t, k_percent = 15.0, span = 1, seed = 0, ratios = (0.8, 0.1, 0.1)))]
fn uniform_mask_plan(
    t: usize,
    k_percent: f64,
    span: usize,
    seed: u64,
    ratios: (f64, f64, f64),
) -> PyResult<PyMaskPlan> {
    let r = self::ratios(ratios.0, ratios.1, ratios.2)?;
    Ok(PyMaskPlan { inner: masking::uniform_mask_plan(t, k_percent, span, &r, seed).map_err(err)? })
}

/// Binary `kernel_size × channels` mask with the central taps removed.
#[pyfunction]
#[pyo3(signature = (kernel_size, m, channels = 1))]
fn build_kernel_mask(kernel_size: usize, m: usize, channels: usize) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&masking::build_kernel_mask(kernel_size, m, channels).map_err(err)?))
}

/// Nearest codebook row per input row: `(indices, quantized)`.
#[pyfunction]
fn vq_quantize(z: Vec<Vec<f64>>, codebook: Vec<Vec<f64>>) -> PyResult<(Vec<usize>, Vec<Vec<f64>>)> {
    let out = models::vq_quantize(&matrix(z)?, &matrix(codebook)?).map_err(err)?;
    Ok((out.indices, rows(&out.quantized)))
}

/// Pre-trains an encoder on `records` with heuristic intensity scores.
/// `config` is TOML in the layout of the `[train]` table; missing keys take
/// their defaults. Returns one dict per step; the final checkpoint is written
/// to `checkpoint_dir` when given.
#[pyfunction]
#[pyo3(signature = (records, config = "", checkpoint_dir = None))]
fn pretrain<'py>(
    py: Python<'py>,
    records: Vec<PyRef<'_, PyFeatureSequence>>,
    config: &str,
    checkpoint_dir: Option<PathBuf>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg: TrainConfig = toml::from_str(config).map_err(|e| EmsException::new_err(format!("config: {e}")))?;
    let features = unwrap_records(&records);
    let scores: Vec<IntensityTrack> = features.iter().map(intensity::heuristic_intensity).collect();
    let data = PretrainData { features: &features, scores: &scores };
    let options = PretrainOptions { checkpoint_dir, ..PretrainOptions::default() };
    let outcome = py.detach(|| training::pretrain(&data, &cfg, &options, |_| Ok(()))).map_err(err)?;
    outcome
        .metrics
        .iter()
        .map(|m| {
            let d = PyDict::new(py);
            d.set_item("step", m.step)?;
            d.set_item("total", m.total)?;
            d.set_item("l_score", m.l_score)?;
            d.set_item("l_joint_input", m.l_joint_input)?;
            d.set_item("l_vq", m.l_vq)?;
            d.set_item("strategy", m.strategy.as_str())?;
            Ok(d)
        })
        .collect()
}

/// Validates an intensity track (values in `[0, 1]`, non-empty).
#[pyfunction]
fn check_intensity(scores: Vec<f64>) -> PyResult<()> {
    IntensityTrack::new(scores, IntensitySource::Model, "python").map(|_| ()).map_err(err)
}

/// Runs the command-line tool with `args` (without the program name) and
/// returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("ems".to_string()).chain(args).collect();
    py.detach(|| ems_core::cli::run(argv))
}

#[pymodule]
pub fn ems(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EmsError", m.py().get_type::<EmsException>())?;
    m.add("EMOTIONS", Emotion::ALL.map(Emotion::as_str).to_vec())?;
    m.add_class::<PyFeatureSequence>()?;
    m.add_class::<PyMaskPlan>()?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(write_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(read_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(heuristic_intensity, m)?)?;
    m.add_function(wrap_pyfunction!(check_intensity, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(mask_budget, m)?)?;
    m.add_function(wrap_pyfunction!(ems_mask_plan, m)?)?;
    m.add_function(wrap_pyfunction!(uniform_mask_plan, m)?)?;
    m.add_function(wrap_pyfunction!(build_kernel_mask, m)?)?;
    m.add_function(wrap_pyfunction!(vq_quantize, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
