//! Per-frame emotion intensity: a trainable extractor, an energy heuristic,
//! and the linear aligner that lifts scalar scores into feature space.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat, Var};
use crate::checkpoint::{self, Checkpoint, CheckpointHeader, CHECKPOINT_VERSION};
use crate::corpus::{Emotion, FeatureSequence};
use crate::error::{EmsError, Result};
use crate::nn::{BiLstm, Conv1d, Linear};
use crate::params::{Adam, AdamConfig, ParamId, ParamStore};
use crate::rng::{derive_seed, seeded};
use crate::stats::FeatureNormalizer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensitySource {
    Model,
    Heuristic,
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityTrack {
    pub scores: Vec<f64>,
    pub source: IntensitySource,
    pub utterance_id: String,
}

impl IntensityTrack {
    pub fn new(scores: Vec<f64>, source: IntensitySource, utterance_id: impl Into<String>) -> Result<Self> {
        if scores.is_empty() {
            return Err(EmsError::invalid("intensity track must have at least one frame"));
        }
        if let Some((t, v)) = scores.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(EmsError::NonFinite(format!("intensity score {v} at frame {t} is outside [0, 1]")));
        }
        Ok(Self { scores, source, utterance_id: utterance_id.into() })
    }

    pub fn ground_truth(features: &FeatureSequence) -> Result<Self> {
        Self::new(features.truth_frame_intensity.clone(), IntensitySource::GroundTruth, &features.utterance_id)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Utterance-level score: the average-pooled frame scores.
    pub fn pooled(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }
}

/// Normalized RMS energy. Frame energy is `sqrt(mean_j exp(x_tj))`, then
/// min-max scaled over the utterance; a flat utterance maps to zeros.
pub fn heuristic_intensity(features: &FeatureSequence) -> IntensityTrack {
    let rms: Vec<f64> = features
        .frames
        .rows()
        .into_iter()
        .map(|r| (r.iter().map(|v| v.exp()).sum::<f64>() / r.len() as f64).sqrt())
        .collect();
    let lo = rms.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let scores = if range > 1e-12 * hi.abs().max(1e-300) {
        rms.iter().map(|v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; rms.len()]
    };
    IntensityTrack { scores, source: IntensitySource::Heuristic, utterance_id: features.utterance_id.clone() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    pub input_dim: usize,
    pub conv_layers: usize,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub lstm_hidden: usize,
    pub fc_hidden: usize,
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            input_dim: 40,
            conv_layers: 4,
            conv_channels: 64,
            conv_kernel: 3,
            lstm_hidden: 32,
            fc_hidden: 32,
            seed: 0,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.conv_layers == 0
            || self.conv_channels == 0
            || self.lstm_hidden == 0
            || self.fc_hidden == 0
        {
            return Err(EmsError::Config("extractor dimensions and depth must be positive".into()));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(EmsError::Config(format!("extractor conv_kernel must be odd, got {}", self.conv_kernel)));
        }
        Ok(())
    }

    fn architecture(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("plain struct");
        v.as_object_mut().expect("object").remove("seed");
        v
    }
}

/// Conv encoder with an intensity head (BiLSTM → FC → ReLU → FC → sigmoid
/// per frame) and an emotion head (BiLSTM → mean pool → linear → softmax).
#[derive(Clone, Debug)]
pub struct IntensityExtractor {
    pub config: ExtractorConfig,
    pub params: ParamStore,
    pub normalizer: FeatureNormalizer,
    convs: Vec<Conv1d>,
    intensity_lstm: BiLstm,
    fc1: Linear,
    fc2: Linear,
    emotion_lstm: BiLstm,
    emotion_out: Linear,
}

/// Graph handles for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ExtractorOutput {
    /// `T×1` per-frame scores in `[0, 1]`.
    pub frame_scores: Var,
    /// `1×4` emotion logits.
    pub emotion_logits: Var,
}

impl IntensityExtractor {
    pub fn new(config: ExtractorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng: ChaCha8Rng = seeded(config.seed);
        let mut params = ParamStore::new();
        let mut convs = Vec::with_capacity(config.conv_layers);
        let mut width = config.input_dim;
        for l in 0..config.conv_layers {
            convs.push(Conv1d::new(
                &mut params,
                &format!("conv{l}"),
                width,
                config.conv_channels,
                config.conv_kernel,
                &mut rng,
            ));
            width = config.conv_channels;
        }
        let h = config.lstm_hidden;
        let intensity_lstm = BiLstm::new(&mut params, "intensity.lstm", width, h, &mut rng);
        let fc1 = Linear::new(&mut params, "intensity.fc1", 2 * h, config.fc_hidden, true, &mut rng);
        let fc2 = Linear::new(&mut params, "intensity.fc2", config.fc_hidden, 1, true, &mut rng);
        let emotion_lstm = BiLstm::new(&mut params, "emotion.lstm", width, h, &mut rng);
        let emotion_out = Linear::new(&mut params, "emotion.out", 2 * h, Emotion::COUNT, true, &mut rng);
        let normalizer = FeatureNormalizer::identity(config.input_dim);
        Ok(Self { config, params, normalizer, convs, intensity_lstm, fc1, fc2, emotion_lstm, emotion_out })
    }

    /// Builds the forward pass on already-normalized frames.
    pub fn forward(&self, g: &mut Graph, x: Var) -> ExtractorOutput {
        let p = &self.params;
        let mut h = x;
        for conv in &self.convs {
            let y = conv.forward(g, p, h);
            h = g.relu(y);
        }
        let a = self.intensity_lstm.forward(g, p, h);
        let a = self.fc1.forward(g, p, a);
        let a = g.relu(a);
        let a = self.fc2.forward(g, p, a);
        let frame_scores = g.sigmoid(a);
        let e = self.emotion_lstm.forward(g, p, h);
        let e = g.mean_rows(e);
        let emotion_logits = self.emotion_out.forward(g, p, e);
        ExtractorOutput { frame_scores, emotion_logits }
    }

    fn check_dims(&self, features: &FeatureSequence) -> Result<()> {
        if features.dim() != self.config.input_dim {
            return Err(EmsError::dims(format!(
                "utterance {} has d={}, extractor expects {}",
                features.utterance_id,
                features.dim(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// Graph, output handles, and the loss `L1(scores, truth) + CE(emotion)`.
    fn loss_graph(&self, features: &FeatureSequence) -> (Graph, ExtractorOutput, Var, Var, Var) {
        let mut g = Graph::new();
        let x = g.constant(self.normalizer.apply(&features.frames));
        let out = self.forward(&mut g, x);
        let truth = g.constant(
            Array2::from_shape_vec((features.len(), 1), features.truth_frame_intensity.clone()).expect("T×1"),
        );
        let l1 = g.l1_mean(out.frame_scores, truth);
        let logp = g.log_softmax_rows(out.emotion_logits);
        let picked = g.slice_cols(logp, features.emotion.index(), 1);
        let ce = g.scale(picked, -1.0);
        let total = g.add(l1, ce);
        (g, out, l1, ce, total)
    }

    /// Intensity-regression plus emotion cross-entropy loss for one utterance.
    pub fn loss(&self, features: &FeatureSequence) -> Result<f64> {
        self.check_dims(features)?;
        let (g, _, _, _, total) = self.loss_graph(features);
        Ok(g.scalar(total))
    }

    /// Loss and its gradient for every parameter (shaped like the store).
    pub fn loss_and_grads(&self, features: &FeatureSequence) -> Result<(f64, Vec<Mat>)> {
        self.check_dims(features)?;
        let (g, _, _, _, total) = self.loss_graph(features);
        let mut acc = self.params.zeros_like();
        g.backward(total).accumulate_into(&mut acc, 1.0);
        Ok((g.scalar(total), acc))
    }

    pub fn architecture_hash(&self) -> Result<String> {
        checkpoint::architecture_hash(&self.config.architecture())
    }

    pub fn to_checkpoint(&self, epochs: u64) -> Result<Checkpoint> {
        let header = CheckpointHeader {
            kind: "intensity".into(),
            version: CHECKPOINT_VERSION,
            architecture_hash: self.architecture_hash()?,
            seed: self.config.seed,
            step: epochs,
            strategy: None,
            config: serde_json::to_value(&self.config)?,
            extra: serde_json::json!({ "normalizer": self.normalizer }),
        };
        Ok(Checkpoint { header, blocks: self.params.blocks() })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.header.kind != "intensity" {
            return Err(EmsError::Checkpoint(format!(
                "expected an intensity checkpoint, found {:?}",
                ckpt.header.kind
            )));
        }
        let config: ExtractorConfig = serde_json::from_value(ckpt.header.config.clone())
            .map_err(|e| EmsError::Checkpoint(format!("bad extractor config: {e}")))?;
        let mut model = Self::new(config)?;
        if model.architecture_hash()? != ckpt.header.architecture_hash {
            return Err(EmsError::ArchitectureMismatch("extractor architecture hash differs from checkpoint".into()));
        }
        model.params.load_blocks(&ckpt.blocks)?;
        let norm = ckpt.header.extra.get("normalizer").cloned().unwrap_or(serde_json::Value::Null);
        model.normalizer =
            serde_json::from_value(norm).map_err(|e| EmsError::Checkpoint(format!("bad normalizer: {e}")))?;
        if model.normalizer.dim() != model.config.input_dim {
            return Err(EmsError::ArchitectureMismatch("normalizer dimension differs from extractor input".into()));
        }
        Ok(model)
    }
}

fn finite_or(values: &Mat, what: &str, id: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(EmsError::NonFinite(format!("{what} for utterance {id}")))
    }
}

/// Per-frame scores and the emotion distribution for one utterance.
pub fn predict_intensity(model: &IntensityExtractor, features: &FeatureSequence) -> Result<(IntensityTrack, [f64; 4])> {
    model.check_dims(features)?;
    let mut g = Graph::new();
    let x = g.constant(model.normalizer.apply(&features.frames));
    let out = model.forward(&mut g, x);
    let probs = g.softmax_rows(out.emotion_logits);
    finite_or(g.value(out.frame_scores), "non-finite intensity activations", &features.utterance_id)?;
    finite_or(g.value(probs), "non-finite emotion activations", &features.utterance_id)?;
    let scores = g.value(out.frame_scores).iter().copied().collect();
    let p = g.value(probs);
    let dist = std::array::from_fn(|i| p[[0, i]]);
    Ok((IntensityTrack::new(scores, IntensitySource::Model, &features.utterance_id)?, dist))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntensityTrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for IntensityTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 8,
            adam: AdamConfig { learning_rate: 2e-3, grad_clip: 5.0, ..AdamConfig::default() },
            seed: 0,
        }
    }
}

/// One metrics record per epoch; epoch 0 evaluates the initial model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityEpochMetrics {
    pub epoch: u64,
    pub train_loss: f64,
    pub train_l1: f64,
    pub train_ce: f64,
    pub dev_mae: f64,
    pub dev_accuracy: f64,
    pub wall_ms: u64,
}

impl IntensityEpochMetrics {
    /// The record with wall time zeroed, for determinism comparisons.
    pub fn without_time(&self) -> Self {
        Self { wall_ms: 0, ..self.clone() }
    }
}

struct SplitEval {
    loss: f64,
    l1: f64,
    ce: f64,
    accuracy: f64,
}

fn evaluate(model: &IntensityExtractor, data: &[FeatureSequence]) -> Result<SplitEval> {
    let (mut loss, mut l1s, mut ces, mut hits) = (0.0, 0.0, 0.0, 0usize);
    for f in data {
        model.check_dims(f)?;
        let (g, out, l1, ce, total) = model.loss_graph(f);
        let logits = g.value(out.emotion_logits);
        let best = (0..Emotion::COUNT).fold(0, |b, i| if logits[[0, i]] > logits[[0, b]] { i } else { b });
        hits += usize::from(best == f.emotion.index());
        loss += g.scalar(total);
        l1s += g.scalar(l1);
        ces += g.scalar(ce);
    }
    let n = data.len().max(1) as f64;
    Ok(SplitEval { loss: loss / n, l1: l1s / n, ce: ces / n, accuracy: hits as f64 / n })
}

/// Trains the extractor on `train`, reporting dev MAE and accuracy per
/// epoch. The feature normalizer is refitted on `train` first.
pub fn train_intensity(
    mut model: IntensityExtractor,
    train: &[FeatureSequence],
    dev: &[FeatureSequence],
    config: &IntensityTrainConfig,
    mut on_epoch: impl FnMut(&IntensityEpochMetrics),
) -> Result<(IntensityExtractor, Vec<IntensityEpochMetrics>)> {
    if train.is_empty() {
        return Err(EmsError::EmptySplit("intensity training needs at least one train utterance".into()));
    }
    if config.batch_size == 0 {
        return Err(EmsError::Config("batch_size must be positive".into()));
    }
    model.normalizer = FeatureNormalizer::fit(train);
    let mut adam = Adam::new(config.adam.clone(), &model.params);
    let mut metrics = Vec::new();
    let start = Instant::now();
    let mut record = |model: &IntensityExtractor, epoch: u64, metrics: &mut Vec<IntensityEpochMetrics>| -> Result<()> {
        let tr = evaluate(model, train)?;
        let dv = evaluate(model, dev)?;
        if !tr.loss.is_finite() {
            return Err(EmsError::NonFinite(format!(
                "intensity training diverged: train loss {} after epoch {epoch}",
                tr.loss
            )));
        }
        let m = IntensityEpochMetrics {
            epoch,
            train_loss: tr.loss,
            train_l1: tr.l1,
            train_ce: tr.ce,
            dev_mae: dv.l1,
            dev_accuracy: dv.accuracy,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        on_epoch(&m);
        metrics.push(m);
        Ok(())
    };
    if config.epochs == 0 {
        return Ok((model, metrics));
    }
    record(&model, 0, &mut metrics)?;
    let mut step = 0u64;
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seeded(derive_seed(config.seed, &[epoch])));
        for batch in order.chunks(config.batch_size) {
            let mut acc = model.params.zeros_like();
            for &i in batch {
                let (loss, grads) = model.loss_and_grads(&train[i])?;
                if !loss.is_finite() {
                    return Err(EmsError::NonFinite(format!(
                        "intensity training diverged at epoch {epoch}, step {step}, utterance {}: loss {loss}",
                        train[i].utterance_id
                    )));
                }
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.scaled_add(1.0 / batch.len() as f64, g);
                }
            }
            adam.step(&mut model.params, &mut acc, step);
            step += 1;
        }
        record(&model, epoch, &mut metrics)?;
    }
    Ok((model, metrics))
}

/// Learned scalar-to-vector map `s ↦ s·w (+ b)` into the encoder's input space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScoreAligner {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub dim: usize,
}

impl ScoreAligner {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let weight = store.add_normal(format!("{name}.weight"), 1, dim, 0.1, rng);
        let bias = bias.then(|| store.add_zeros(format!("{name}.bias"), 1, dim));
        Self { weight, bias, dim }
    }

    /// `T×d` embedding of a `T×1` score column, inside a graph.
    pub fn embed(&self, g: &mut Graph, store: &ParamStore, scores: Var) -> Var {
        let w = g.param(store, self.weight);
        let e = g.matmul(scores, w);
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(e, b)
            }
            None => e,
        }
    }
}

/// Linear interpolation of `scores` onto `target_len` evenly spaced points
/// spanning the same first and last frame.
pub fn resample_linear(scores: &[f64], target_len: usize) -> Result<Vec<f64>> {
    if target_len == 0 {
        return Err(EmsError::invalid("target length must be at least 1"));
    }
    if scores.is_empty() {
        return Err(EmsError::invalid("cannot resample an empty track"));
    }
    let n = scores.len();
    if n == target_len {
        return Ok(scores.to_vec());
    }
    if target_len == 1 || n == 1 {
        return Ok(vec![scores[0]; target_len]);
    }
    let step = (n - 1) as f64 / (target_len - 1) as f64;
    Ok((0..target_len)
        .map(|j| {
            if j == target_len - 1 {
                return scores[n - 1];
            }
            let pos = j as f64 * step;
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            if i + 1 >= n {
                scores[n - 1]
            } else {
                scores[i] + frac * (scores[i + 1] - scores[i])
            }
        })
        .collect())
}

/// Resamples a track to `target_len` frames and embeds each score.
pub fn align_scores(
    track: &IntensityTrack,
    aligner: &ScoreAligner,
    store: &ParamStore,
    target_len: usize,
) -> Result<(Vec<f64>, Mat)> {
    let scores = resample_linear(&track.scores, target_len)?;
    let mut g = Graph::new();
    let s = g.constant(Array2::from_shape_vec((target_len, 1), scores.clone()).expect("T×1"));
    let e = aligner.embed(&mut g, store, s);
    Ok((scores, g.value(e).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(frames: Mat) -> FeatureSequence {
        let t = frames.nrows();
        FeatureSequence {
            frames,
            frame_rate: 100.0,
            truth_frame_intensity: vec![0.0; t],
            frame_units: vec![0; t],
            emotion: Emotion::Neutral,
            utterance_id: "u".into(),
        }
    }

    #[test]
    fn heuristic_constant_is_zero() {
        let t = heuristic_intensity(&seq(Array2::from_elem((6, 4), -3.0)));
        assert_eq!(t.scores, vec![0.0; 6]);
    }

    #[test]
    fn heuristic_single_peak_is_one() {
        let mut f = Array2::from_elem((7, 4), -5.0);
        f.row_mut(4).fill(1.0);
        let t = heuristic_intensity(&seq(f));
        assert_eq!(t.scores[4], 1.0);
        assert!(t.scores.iter().enumerate().all(|(i, &s)| i == 4 || s < 1.0));
    }

    #[test]
    fn resample_examples() {
        let ramp: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
        let r = resample_linear(&ramp, 5).unwrap();
        assert_eq!((r[0], r[4]), (0.0, 1.0));
        assert!(r.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(resample_linear(&ramp, 10).unwrap(), ramp);
        assert!(resample_linear(&ramp, 0).is_err());
        assert_eq!(resample_linear(&[0.3], 3).unwrap(), vec![0.3; 3]);
    }

    #[test]
    fn zero_aligner_gives_zero_embeddings() {
        let mut store = ParamStore::new();
        let a = ScoreAligner::new(&mut store, "align", 5, true, &mut seeded(1));
        store.get_mut(a.weight).fill(0.0);
        let track = IntensityTrack::new(vec![0.2, 0.9, 0.4], IntensitySource::Heuristic, "u").unwrap();
        let (s, e) = align_scores(&track, &a, &store, 3).unwrap();
        assert_eq!(s, track.scores);
        assert!(e.iter().all(|&v| v == 0.0));
        assert_eq!(e.dim(), (3, 5));
    }

    #[test]
    fn tracks_reject_out_of_range_scores() {
        assert!(IntensityTrack::new(vec![0.5, 1.2], IntensitySource::Model, "u").is_err());
        assert!(IntensityTrack::new(vec![f64::NAN], IntensitySource::Model, "u").is_err());
        assert!(IntensityTrack::new(vec![], IntensitySource::Model, "u").is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = ExtractorConfig {
            input_dim: 6,
            conv_layers: 2,
            conv_channels: 5,
            lstm_hidden: 3,
            fc_hidden: 4,
            ..Default::default()
        };
        let mut m = IntensityExtractor::new(cfg.clone()).unwrap();
        m.normalizer.mean[2] = 0.5;
        let back = IntensityExtractor::from_checkpoint(&m.to_checkpoint(3).unwrap()).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.normalizer, m.normalizer);
        let mut other = m.to_checkpoint(3).unwrap();
        other.header.config = serde_json::to_value(ExtractorConfig { conv_layers: 3, ..cfg }).unwrap();
        assert!(matches!(IntensityExtractor::from_checkpoint(&other), Err(EmsError::ArchitectureMismatch(_))));
    }
}
