//! Frozen-representation probes and strategy-comparison reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat};
use crate::checkpoint;
use crate::corpus::Emotion;
use crate::error::{EmsError, Result};
use crate::models::{InputMode, KernelMode, ModelFamily, SslModel};
use crate::nn::Linear;
use crate::params::{Adam, AdamConfig, ParamStore};
use crate::rng::{derive_seed, seeded};
use crate::stats::{above_chance_threshold, mean};
use crate::training::{pretrain, MaskStrategy, PretrainData, PretrainOptions, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTask {
    UtteranceEmotion,
    FrameLabel,
}

impl ProbeTask {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::UtteranceEmotion => "utterance_emotion",
            Self::FrameLabel => "frame_label",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// One classifier per seed (initialization and minibatch order).
    pub seeds: Vec<u64>,
    pub epochs: usize,
    /// Epochs for the frame probe, which sees far more examples.
    pub frame_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Hidden width of a one-hidden-layer probe; `None` is a linear probe.
    pub hidden: Option<usize>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2], epochs: 60, frame_epochs: 8, batch_size: 64, learning_rate: 5e-3, hidden: None }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.batch_size == 0 || self.hidden == Some(0) || !(self.learning_rate > 0.0) {
            return Err(EmsError::Config(
                "probe needs seeds, a positive batch size, hidden width and learning rate".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub task: ProbeTask,
    /// Mean accuracy over `seeds`.
    pub accuracy: f64,
    pub error_rate: f64,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<f64>,
    pub config_hash: String,
    pub n_train: usize,
    pub n_test: usize,
    pub n_classes: usize,
    /// Set when the task is trivial (a single class), so the accuracy says nothing.
    pub degenerate: bool,
}

impl ProbeResult {
    /// Accuracy needed to beat uniform chance at 95% one-sided confidence.
    pub fn chance_threshold(&self) -> f64 {
        above_chance_threshold(1.0 / self.n_classes.max(1) as f64, self.n_test)
    }
}

/// Frozen encoder outputs for one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Representations {
    pub ids: Vec<String>,
    /// `n_utt × d_hidden` mean-pooled `H`.
    pub pooled: Mat,
    /// Per-utterance `T×d_hidden` frame representations.
    pub frames: Vec<Mat>,
    pub labels: Vec<Emotion>,
    pub frame_labels: Vec<Vec<u32>>,
}

/// Runs the frozen encoder on unmasked inputs. NPC models use the kernel
/// mask of the strategy they were trained with.
pub fn extract_representations(
    model: &SslModel,
    strategy: MaskStrategy,
    data: &PretrainData<'_>,
) -> Result<Representations> {
    if data.features.len() != data.scores.len() {
        return Err(EmsError::dims("features and intensity tracks differ in count"));
    }
    let d = model.config.hidden_dim();
    let mut pooled = Array2::zeros((data.features.len(), d));
    let mut frames = Vec::with_capacity(data.features.len());
    for (i, (f, track)) in data.features.iter().zip(data.scores).enumerate() {
        let mut g = Graph::new();
        let x = model.normalizer.apply(&f.frames);
        let input = model.build_input(&mut g, &x, &track.scores)?;
        let mode = match (model.config.family, strategy) {
            (ModelFamily::Npc, MaskStrategy::Ems) => KernelMode::Ems(&track.scores),
            _ => KernelMode::Base,
        };
        let out = model.forward(&mut g, input, mode)?;
        let h = g.value(out.hidden);
        if !h.iter().all(|v| v.is_finite()) {
            return Err(EmsError::NonFinite(format!("representation of {}", f.utterance_id)));
        }
        pooled.row_mut(i).assign(&h.mean_axis(ndarray::Axis(0)).expect("T >= 1"));
        frames.push(h.clone());
    }
    Ok(Representations {
        ids: data.features.iter().map(|f| f.utterance_id.clone()).collect(),
        pooled,
        frames,
        labels: data.features.iter().map(|f| f.emotion).collect(),
        frame_labels: data.features.iter().map(|f| f.frame_units.clone()).collect(),
    })
}

fn standardize(train: &Mat, test: &Mat) -> (Mat, Mat) {
    let n = train.nrows().max(1) as f64;
    let mean = train.sum_axis(ndarray::Axis(0)) / n;
    let std: Vec<f64> = (0..train.ncols())
        .map(|j| {
            let m = mean[j];
            (train.column(j).iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt().max(1e-8)
        })
        .collect();
    let apply = |x: &Mat| Array2::from_shape_fn(x.dim(), |(i, j)| (x[[i, j]] - mean[j]) / std[j]);
    (apply(train), apply(test))
}

fn probe_hash(config: &ProbeConfig, task: ProbeTask) -> Result<String> {
    checkpoint::architecture_hash(&serde_json::json!({ "probe": config, "task": task }))
}

/// Trains one classifier and returns its test accuracy.
fn fit_and_score(
    train_x: &Mat,
    train_y: &[usize],
    test_x: &Mat,
    test_y: &[usize],
    n_classes: usize,
    epochs: usize,
    config: &ProbeConfig,
    seed: u64,
) -> f64 {
    let mut rng = seeded(derive_seed(seed, &[0]));
    let mut store = ParamStore::new();
    let d = train_x.ncols();
    let layers: Vec<Linear> = match config.hidden {
        Some(h) => vec![
            Linear::new(&mut store, "probe.hidden", d, h, true, &mut rng),
            Linear::new(&mut store, "probe.out", h, n_classes, true, &mut rng),
        ],
        None => vec![Linear::new(&mut store, "probe.out", d, n_classes, true, &mut rng)],
    };
    let forward = |g: &mut Graph, store: &ParamStore, x: Mat| {
        let mut h = g.constant(x);
        for (i, l) in layers.iter().enumerate() {
            if i > 0 {
                h = g.relu(h);
            }
            h = l.forward(g, store, h);
        }
        h
    };
    let mut adam = Adam::new(AdamConfig { learning_rate: config.learning_rate, ..AdamConfig::default() }, &store);
    let mut order: Vec<usize> = (0..train_x.nrows()).collect();
    let mut step = 0;
    for epoch in 0..epochs {
        order.shuffle(&mut seeded(derive_seed(seed, &[1, epoch as u64])));
        for batch in order.chunks(config.batch_size) {
            let x = Array2::from_shape_fn((batch.len(), d), |(i, j)| train_x[[batch[i], j]]);
            let onehot =
                Array2::from_shape_fn((batch.len(), n_classes), |(i, c)| f64::from(u8::from(train_y[batch[i]] == c)));
            let mut g = Graph::new();
            let logits = forward(&mut g, &store, x);
            let logp = g.log_softmax_rows(logits);
            let y = g.constant(onehot);
            let picked = g.mul(logp, y);
            let sum = g.sum_all(picked);
            let loss = g.scale(sum, -1.0 / batch.len() as f64);
            let mut grads = store.zeros_like();
            g.backward(loss).accumulate_into(&mut grads, 1.0);
            adam.step(&mut store, &mut grads, step);
            step += 1;
        }
    }
    let mut g = Graph::new();
    let logits = forward(&mut g, &store, test_x.clone());
    let logits = g.value(logits);
    let hits = test_y
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let row = logits.row(i);
            let best = (0..n_classes).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            best == y
        })
        .count();
    hits as f64 / test_y.len().max(1) as f64
}

fn run_probe(
    task: ProbeTask,
    train_x: &Mat,
    train_y: &[usize],
    test_x: &Mat,
    test_y: &[usize],
    config: &ProbeConfig,
    epochs: usize,
) -> Result<ProbeResult> {
    config.validate()?;
    if train_x.nrows() != train_y.len() || test_x.nrows() != test_y.len() {
        return Err(EmsError::dims("probe features and labels differ in count"));
    }
    if train_x.ncols() != test_x.ncols() {
        return Err(EmsError::dims("train and test features differ in width"));
    }
    if test_y.is_empty() || train_y.is_empty() {
        return Err(EmsError::EmptySplit("probe needs train and test examples".into()));
    }
    let n_classes = train_y.iter().chain(test_y).max().map_or(0, |m| m + 1);
    let distinct = train_y.iter().collect::<std::collections::BTreeSet<_>>().len();
    let per_seed: Vec<f64> = if distinct < 2 {
        // Nothing to learn: the constant predictor is the fitted classifier.
        let only = train_y[0];
        let hit = test_y.iter().filter(|&&y| y == only).count() as f64 / test_y.len() as f64;
        vec![hit; config.seeds.len()]
    } else {
        let (tr, te) = standardize(train_x, test_x);
        config.seeds.iter().map(|&s| fit_and_score(&tr, train_y, &te, test_y, n_classes, epochs, config, s)).collect()
    };
    let accuracy = mean(&per_seed);
    Ok(ProbeResult {
        task,
        accuracy,
        error_rate: 1.0 - accuracy,
        seeds: config.seeds.clone(),
        per_seed,
        config_hash: probe_hash(config, task)?,
        n_train: train_y.len(),
        n_test: test_y.len(),
        n_classes,
        degenerate: distinct < 2,
    })
}

/// Utterance-level classifier on pooled vectors.
pub fn train_probe(
    train_x: &Mat,
    train_y: &[usize],
    test_x: &Mat,
    test_y: &[usize],
    config: &ProbeConfig,
) -> Result<ProbeResult> {
    let distinct = train_y.iter().collect::<std::collections::BTreeSet<_>>().len();
    if distinct < 2 {
        return Err(EmsError::invalid("probe training split has fewer than two classes"));
    }
    run_probe(ProbeTask::UtteranceEmotion, train_x, train_y, test_x, test_y, config, config.epochs)
}

fn stack_frames(frames: &[Mat], labels: &[Vec<u32>]) -> Result<(Mat, Vec<usize>)> {
    if frames.len() != labels.len() {
        return Err(EmsError::dims("frame matrices and label sequences differ in count"));
    }
    let total: usize = frames.iter().map(|f| f.nrows()).sum();
    let d = frames.first().map_or(0, |f| f.ncols());
    let mut x = Array2::zeros((total, d));
    let mut y = Vec::with_capacity(total);
    let mut at = 0;
    for (f, l) in frames.iter().zip(labels) {
        if f.nrows() != l.len() {
            return Err(EmsError::dims(format!("{} frames but {} frame labels", f.nrows(), l.len())));
        }
        x.slice_mut(s![at..at + f.nrows(), ..]).assign(f);
        y.extend(l.iter().map(|&u| u as usize));
        at += f.nrows();
    }
    Ok((x, y))
}

/// Frame-level classifier on per-frame representations. A single-class
/// training set is flagged degenerate (accuracy is then trivially 1).
pub fn frame_probe(
    train_frames: &[Mat],
    train_labels: &[Vec<u32>],
    test_frames: &[Mat],
    test_labels: &[Vec<u32>],
    config: &ProbeConfig,
) -> Result<ProbeResult> {
    let (tx, ty) = stack_frames(train_frames, train_labels)?;
    let (vx, vy) = stack_frames(test_frames, test_labels)?;
    run_probe(ProbeTask::FrameLabel, &tx, &ty, &vx, &vy, config, config.frame_epochs)
}

pub fn emotion_labels(labels: &[Emotion]) -> Vec<usize> {
    labels.iter().map(|e| e.index()).collect()
}

/// Both probes for a train/eval pair of representations.
pub fn probe_all(
    train: &Representations,
    eval: &Representations,
    config: &ProbeConfig,
    frames: bool,
) -> Result<ProbeSet> {
    let utterance = train_probe(
        &train.pooled,
        &emotion_labels(&train.labels),
        &eval.pooled,
        &emotion_labels(&eval.labels),
        config,
    )?;
    let frame = if frames {
        Some(frame_probe(&train.frames, &train.frame_labels, &eval.frames, &eval.frame_labels, config)?)
    } else {
        None
    };
    Ok(ProbeSet { utterance, frame })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub utterance: ProbeResult,
    pub frame: Option<ProbeResult>,
}

/// One cell of an experiment matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub strategy: MaskStrategy,
    /// Transformer masking percentage; defaults to the base config.
    #[serde(default)]
    pub k_percent: Option<f64>,
    /// NPC kernel mask size; defaults to the base config.
    #[serde(default)]
    pub mask_size: Option<usize>,
    #[serde(default)]
    pub input_mode: Option<InputMode>,
    /// Use this pre-trained checkpoint instead of training the cell.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub train: TrainConfig,
    pub cells: Vec<CellSpec>,
    pub probe: ProbeConfig,
    pub frame_probe: bool,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            cells: vec![
                CellSpec {
                    strategy: MaskStrategy::Uniform,
                    k_percent: Some(15.0),
                    mask_size: None,
                    input_mode: None,
                    checkpoint: None,
                },
                CellSpec {
                    strategy: MaskStrategy::Ems,
                    k_percent: Some(15.0),
                    mask_size: None,
                    input_mode: None,
                    checkpoint: None,
                },
                CellSpec {
                    strategy: MaskStrategy::Ems,
                    k_percent: Some(25.0),
                    mask_size: None,
                    input_mode: None,
                    checkpoint: None,
                },
            ],
            probe: ProbeConfig::default(),
            frame_probe: true,
        }
    }
}

/// Table key: family × strategy × parameter × input mode.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub family: ModelFamily,
    pub strategy: MaskStrategy,
    /// `k_percent` for the transformer, mask size for NPC.
    pub parameter: String,
    pub input_mode: InputMode,
}

impl CellKey {
    pub fn slug(&self) -> String {
        format!("{}-{}-{}-{}", self.family.as_str(), self.strategy.as_str(), self.parameter, self.input_mode.as_str())
    }
}

fn format_param(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

impl CellSpec {
    /// The full training config of this cell.
    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.strategy = self.strategy;
        if let Some(k) = self.k_percent {
            cfg.k_percent = k;
        }
        if let Some(m) = self.mask_size {
            cfg.model.npc.mask_size = m;
        }
        if let Some(mode) = self.input_mode {
            cfg.model.input_mode = mode;
        }
        cfg
    }

    pub fn key(&self, base: &TrainConfig) -> CellKey {
        let cfg = self.train_config(base);
        let parameter = match cfg.model.family {
            ModelFamily::Transformer => format_param(cfg.k_percent),
            ModelFamily::Npc => cfg.model.npc.mask_size.to_string(),
        };
        CellKey { family: cfg.model.family, strategy: cfg.strategy, parameter, input_mode: cfg.model.input_mode }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Ok { probes: ProbeSet, train_steps: u64 },
    Failed { error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub key: CellKey,
    pub outcome: CellOutcome,
}

/// A published number shown next to desk-scale results for orientation only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaperReference {
    pub table: u32,
    pub model: String,
    pub setting: String,
    pub ser_accuracy: f64,
    pub reproduced: bool,
    pub note: String,
}

const NOT_REPRODUCED: &str =
    "reference value on real emotional speech with full-scale pre-training; NOT reproduced at desk scale";

pub fn paper_references() -> Vec<PaperReference> {
    let row = |table, model: &str, setting: &str, acc| PaperReference {
        table,
        model: model.into(),
        setting: setting.into(),
        ser_accuracy: acc,
        reproduced: false,
        note: NOT_REPRODUCED.into(),
    };
    vec![
        row(1, "Mockingjay", "baseline", 50.28),
        row(1, "Mockingjay", "EMS(25%)", 57.42),
        row(2, "NPC", "baseline", 59.08),
        row(2, "NPC", "Separate Input(5)", 60.56),
        row(2, "NPC", "Joint Input(5)", 62.14),
    ]
}

/// Signed per-seed frame error-rate difference of an EMS cell against the
/// uniform cell of the same family and input mode (negative favours EMS).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub ems: CellKey,
    pub uniform: CellKey,
    pub seeds: Vec<u64>,
    pub error_rate_delta: Vec<f64>,
    pub mean_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    /// False when any cell failed.
    pub complete: bool,
    pub cells: Vec<CellReport>,
    pub frame_error_deltas: Vec<PairedDelta>,
    pub paper_reference: Vec<PaperReference>,
}

/// Train/eval inputs for a comparison run.
#[derive(Clone, Copy, Debug)]
pub struct ExperimentData<'a> {
    pub train: PretrainData<'a>,
    pub eval: PretrainData<'a>,
}

fn run_cell(
    spec: &CellSpec,
    config: &CompareConfig,
    data: &ExperimentData<'_>,
    ckpt_dir: Option<&Path>,
) -> Result<(ProbeSet, u64)> {
    let cfg = spec.train_config(&config.train);
    let key = spec.key(&config.train);
    let (model, steps) = match &spec.checkpoint {
        Some(path) => {
            let ckpt = checkpoint::load(path)?;
            let mut model = SslModel::new(cfg.model.clone())?;
            model.load_checkpoint(&ckpt)?;
            (model, ckpt.header.step)
        }
        None => {
            let options =
                PretrainOptions { checkpoint_dir: ckpt_dir.map(|d| d.join(key.slug())), ..Default::default() };
            let out = pretrain(&data.train, &cfg, &options, |_| Ok(()))?;
            (out.model, out.step)
        }
    };
    let train = extract_representations(&model, cfg.strategy, &data.train)?;
    let eval = extract_representations(&model, cfg.strategy, &data.eval)?;
    Ok((probe_all(&train, &eval, &config.probe, config.frame_probe)?, steps))
}

/// Trains (or loads) every cell, probes it, and assembles the report. A
/// failing cell is recorded as failed and the report marked incomplete.
pub fn compare_strategies(
    config: &CompareConfig,
    data: &ExperimentData<'_>,
    checkpoint_dir: Option<&Path>,
    mut on_cell: impl FnMut(&CellReport),
) -> Result<CompareReport> {
    config.probe.validate()?;
    if config.cells.is_empty() {
        return Err(EmsError::Config("experiment matrix has no cells".into()));
    }
    let mut seen = BTreeMap::new();
    for spec in &config.cells {
        if seen.insert(spec.key(&config.train), ()).is_some() {
            return Err(EmsError::Config(format!("duplicate cell {}", spec.key(&config.train).slug())));
        }
    }
    let mut cells = Vec::with_capacity(config.cells.len());
    for spec in &config.cells {
        let outcome = match run_cell(spec, config, data, checkpoint_dir) {
            Ok((probes, train_steps)) => CellOutcome::Ok { probes, train_steps },
            Err(e) => CellOutcome::Failed { error: e.to_string() },
        };
        let report = CellReport { key: spec.key(&config.train), outcome };
        on_cell(&report);
        cells.push(report);
    }
    let frame_errors = |c: &CellReport| match &c.outcome {
        CellOutcome::Ok { probes: ProbeSet { frame: Some(f), .. }, .. } => {
            Some(f.per_seed.iter().map(|a| 1.0 - a).collect::<Vec<_>>())
        }
        _ => None,
    };
    let mut deltas = Vec::new();
    for ems in cells.iter().filter(|c| c.key.strategy == MaskStrategy::Ems) {
        let base = cells.iter().find(|c| {
            c.key.strategy == MaskStrategy::Uniform
                && c.key.family == ems.key.family
                && c.key.input_mode == ems.key.input_mode
        });
        if let (Some(base), Some(e), Some(u)) = (base, frame_errors(ems), base.and_then(frame_errors)) {
            let d: Vec<f64> = e.iter().zip(&u).map(|(a, b)| a - b).collect();
            deltas.push(PairedDelta {
                ems: ems.key.clone(),
                uniform: base.key.clone(),
                seeds: config.probe.seeds.clone(),
                mean_delta: mean(&d),
                error_rate_delta: d,
            });
        }
    }
    Ok(CompareReport {
        complete: cells.iter().all(|c| matches!(c.outcome, CellOutcome::Ok { .. })),
        cells,
        frame_error_deltas: deltas,
        paper_reference: paper_references(),
    })
}

pub const REPORT_CSV_HEADER: &str = "family,strategy,parameter,input_mode,task,seed,accuracy,error_rate,status";

impl CompareReport {
    /// One row per cell, task and seed; failed cells get a single row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            let k = &c.key;
            let prefix =
                format!("{},{},{},{}", k.family.as_str(), k.strategy.as_str(), k.parameter, k.input_mode.as_str());
            match &c.outcome {
                CellOutcome::Ok { probes, .. } => {
                    for r in std::iter::once(&probes.utterance).chain(probes.frame.as_ref()) {
                        for (seed, acc) in r.seeds.iter().zip(&r.per_seed) {
                            out.push_str(&format!(
                                "{prefix},{},{seed},{acc:.6},{:.6},ok\n",
                                r.task.as_str(),
                                1.0 - acc
                            ));
                        }
                    }
                }
                CellOutcome::Failed { .. } => out.push_str(&format!("{prefix},,,,,failed\n")),
            }
        }
        out
    }

    /// Results nested as family → strategy → parameter → input mode.
    pub fn to_json(&self) -> serde_json::Value {
        let mut nested = serde_json::Map::new();
        for c in &self.cells {
            let k = &c.key;
            let entry = nested
                .entry(k.family.as_str())
                .or_insert_with(|| serde_json::json!({}))
                .as_object_mut()
                .expect("object")
                .entry(k.strategy.as_str())
                .or_insert_with(|| serde_json::json!({}))
                .as_object_mut()
                .expect("object")
                .entry(k.parameter.clone())
                .or_insert_with(|| serde_json::json!({}));
            entry[k.input_mode.as_str()] = serde_json::to_value(&c.outcome).expect("plain data");
        }
        serde_json::json!({
            "complete": self.complete,
            "results": nested,
            "frame_error_deltas": self.frame_error_deltas,
            "paper_reference": self.paper_reference,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_features_are_perfect() {
        let y: Vec<usize> = (0..80).map(|i| i % 4).collect();
        let x = Array2::from_shape_fn((80, 4), |(i, c)| f64::from(u8::from(y[i] == c)));
        let r = train_probe(&x, &y, &x, &y, &ProbeConfig::default()).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.per_seed.len(), 3);
    }

    #[test]
    fn single_class_is_rejected_or_flagged() {
        let x = Array2::from_shape_fn((10, 3), |(i, j)| (i + j) as f64);
        assert!(train_probe(&x, &[0; 10], &x, &[0; 10], &ProbeConfig::default()).is_err());
        let frames = vec![x.clone()];
        let labels = vec![vec![2u32; 10]];
        let r = frame_probe(&frames, &labels, &frames, &labels, &ProbeConfig::default()).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.accuracy, 1.0);
        assert!(frame_probe(&frames, &[vec![1u32; 9]], &frames, &labels, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn paper_rows_are_flagged() {
        let refs = paper_references();
        assert!(refs.iter().all(|r| !r.reproduced));
        assert!(refs.iter().any(|r| r.ser_accuracy == 57.42));
        assert!(refs.iter().any(|r| r.ser_accuracy == 62.14));
    }
}
