//! Composite pre-training objective, input construction and the training
//! loop with checkpointing, resume and warm start.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat, Var};
use crate::checkpoint::{self, Checkpoint};
use crate::corpus::FeatureSequence;
use crate::error::{EmsError, Result};
use crate::intensity::IntensityTrack;
use crate::masking::{ems_mask_plan, uniform_mask_plan, ActionRatios, MaskConfig, MaskPlan, TieRule};
use crate::models::{KernelMode, ModelConfig, ModelFamily, SslModel};
use crate::params::{Adam, AdamConfig};
use crate::rng::{derive_seed, seeded};
use crate::stats::FeatureNormalizer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    /// Intensity-guided: top-k frames for the transformer, the dynamic
    /// kernel tap for NPC.
    Ems,
    /// Uniform-random frames for the transformer, the static kernel mask for NPC.
    Uniform,
}

impl MaskStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ems => "ems",
            Self::Uniform => "uniform",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScope {
    MaskedOnly,
    AllFrames,
}

impl LossScope {
    pub fn default_for(family: ModelFamily) -> Self {
        match family {
            ModelFamily::Transformer => Self::MaskedOnly,
            ModelFamily::Npc => Self::AllFrames,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub strategy: MaskStrategy,
    /// Percentage of frames masked per utterance (transformer only).
    pub k_percent: f64,
    pub span: usize,
    pub action_ratios: ActionRatios,
    /// `None` picks the family default.
    pub loss_scope: Option<LossScope>,
    pub steps: u64,
    pub batch_size: usize,
    /// Random crop length; `None` trains on whole utterances.
    pub crop_frames: Option<usize>,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many steps; 0 disables.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            strategy: MaskStrategy::Ems,
            k_percent: 25.0,
            span: 7,
            action_ratios: ActionRatios::default(),
            loss_scope: None,
            steps: 2000,
            batch_size: 4,
            crop_frames: Some(100),
            adam: AdamConfig { learning_rate: 5e-4, warmup_steps: 100, grad_clip: 1.0, ..AdamConfig::default() },
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.action_ratios.validate().map_err(|e| EmsError::Config(e.to_string()))?;
        if !(self.k_percent > 0.0 && self.k_percent < 100.0) {
            return Err(EmsError::Config(format!("k_percent must lie in (0, 100), got {}", self.k_percent)));
        }
        if self.span == 0 || self.batch_size == 0 || self.crop_frames == Some(0) {
            return Err(EmsError::Config("span, batch_size and crop_frames must be positive".into()));
        }
        if !(self.adam.learning_rate >= 0.0) {
            return Err(EmsError::Config("learning_rate must be non-negative".into()));
        }
        Ok(())
    }

    pub fn scope(&self) -> LossScope {
        self.loss_scope.unwrap_or(LossScope::default_for(self.model.family))
    }
}

fn check_pair(features: &Mat, emb: &Mat) -> Result<()> {
    if features.dim() != emb.dim() {
        return Err(EmsError::dims(format!("features {:?} vs score embeddings {:?}", features.dim(), emb.dim())));
    }
    Ok(())
}

/// `x_t + e(s_t)`
pub fn make_joint_input(features: &Mat, score_embeddings: &Mat) -> Result<Mat> {
    check_pair(features, score_embeddings)?;
    Ok(features + score_embeddings)
}

/// `[x_t ‖ e(s_t)]`
pub fn make_separate_input(features: &Mat, score_embeddings: &Mat) -> Result<Mat> {
    check_pair(features, score_embeddings)?;
    Ok(concatenate(Axis(1), &[features.view(), score_embeddings.view()]).expect("row counts checked"))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_score: f64,
    pub l_joint_input: f64,
    /// NPC only.
    pub l_vq: Option<f64>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_score: f64, l_joint_input: f64, l_vq: Option<f64>) -> Self {
        Self { l_score, l_joint_input, l_vq, total: l_score + l_joint_input + l_vq.unwrap_or(0.0) }
    }

    /// `|total − Σ components|`
    pub fn additivity_error(&self) -> f64 {
        (self.total - (self.l_score + self.l_joint_input + self.l_vq.unwrap_or(0.0))).abs()
    }
}

/// Model outputs that enter the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub score: Vec<f64>,
    pub joint: Mat,
    pub vq_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    /// The unmasked encoder input (`x + e(s)` or `[x ‖ e(s)]`).
    pub joint: Mat,
    /// The frozen extractor's scores.
    pub score: Vec<f64>,
}

fn scope_rows(plan: &MaskPlan, t: usize, scope: LossScope) -> Result<Vec<usize>> {
    if plan.len() != t {
        return Err(EmsError::dims(format!("mask plan covers {} frames, predictions have {t}", plan.len())));
    }
    let rows = match scope {
        LossScope::MaskedOnly => plan.masked_indices(),
        LossScope::AllFrames => (0..t).collect(),
    };
    if rows.is_empty() {
        return Err(EmsError::invalid("loss scope is empty: no masked frames"));
    }
    Ok(rows)
}

/// Mean absolute errors over the scope; `l_vq` is carried through for NPC.
pub fn compute_losses(
    pred: &Predictions,
    targets: &Targets,
    plan: &MaskPlan,
    family: ModelFamily,
    scope: LossScope,
) -> Result<LossBreakdown> {
    let t = pred.score.len();
    if pred.joint.dim() != targets.joint.dim() || targets.score.len() != t || pred.joint.nrows() != t {
        return Err(EmsError::dims("prediction and target shapes differ"));
    }
    let rows = scope_rows(plan, t, scope)?;
    let l_score = rows.iter().map(|&r| (pred.score[r] - targets.score[r]).abs()).sum::<f64>() / rows.len() as f64;
    let w = pred.joint.ncols();
    let mut acc = 0.0;
    for &r in &rows {
        acc += pred.joint.row(r).iter().zip(targets.joint.row(r)).map(|(a, b)| (a - b).abs()).sum::<f64>();
    }
    let l_joint = acc / (rows.len() * w) as f64;
    let l_vq = match family {
        ModelFamily::Npc => Some(pred.vq_loss.unwrap_or(0.0)),
        ModelFamily::Transformer => None,
    };
    Ok(LossBreakdown::new(l_score, l_joint, l_vq))
}

/// One utterance of a training batch, already cropped and normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem {
    pub frames: Mat,
    pub scores: Vec<f64>,
    pub plan: MaskPlan,
}

/// Training and evaluation graph for one item; returns `(graph, total,
/// l_score, l_joint, l_vq)` handles.
pub fn loss_graph(
    model: &SslModel,
    item: &BatchItem,
    strategy: MaskStrategy,
    scope: LossScope,
) -> Result<(Graph, Var, Var, Var, Option<Var>)> {
    let mut g = Graph::new();
    let input = model.build_input(&mut g, &item.frames, &item.scores)?;
    let t = item.frames.nrows();
    let target = g.value(input).clone();
    let out = match model.config.family {
        ModelFamily::Transformer => {
            if item.plan.len() != t {
                return Err(EmsError::dims(format!("mask plan covers {} frames, input has {t}", item.plan.len())));
            }
            let masked = g.gather_rows(input, item.plan.row_sources());
            model.forward(&mut g, masked, KernelMode::Base)?
        }
        ModelFamily::Npc => {
            let mode = match strategy {
                MaskStrategy::Ems => KernelMode::Ems(&item.scores),
                MaskStrategy::Uniform => KernelMode::Base,
            };
            model.forward(&mut g, input, mode)?
        }
    };
    let rows: Vec<Option<usize>> = scope_rows(&item.plan, t, scope)?.into_iter().map(Some).collect();
    let target_rows = Array2::from_shape_fn((rows.len(), target.ncols()), |(i, j)| target[[rows[i].expect("some"), j]]);
    let score_rows = Array2::from_shape_fn((rows.len(), 1), |(i, _)| item.scores[rows[i].expect("some")]);
    let jp = g.gather_rows(out.joint_pred, rows.clone());
    let jt = g.constant(target_rows);
    let l_joint = g.l1_mean(jp, jt);
    let sp = g.gather_rows(out.score_pred, rows);
    let st = g.constant(score_rows);
    let l_score = g.l1_mean(sp, st);
    let mut total = g.add(l_score, l_joint);
    if let Some(vq) = out.vq_loss {
        total = g.add(total, vq);
    }
    Ok((g, total, l_score, l_joint, out.vq_loss))
}

/// Training pairs: features with their frozen intensity tracks.
#[derive(Clone, Copy, Debug)]
pub struct PretrainData<'a> {
    pub features: &'a [FeatureSequence],
    pub scores: &'a [IntensityTrack],
}

impl PretrainData<'_> {
    fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(EmsError::EmptySplit("pre-training needs at least one utterance".into()));
        }
        if self.features.len() != self.scores.len() {
            return Err(EmsError::dims(format!(
                "{} utterances but {} intensity tracks",
                self.features.len(),
                self.scores.len()
            )));
        }
        for (f, s) in self.features.iter().zip(self.scores) {
            if f.len() != s.len() {
                return Err(EmsError::dims(format!(
                    "utterance {}: T={} but {} scores",
                    f.utterance_id,
                    f.len(),
                    s.len()
                )));
            }
        }
        Ok(())
    }
}

/// Draws the batch of `step` (1-based). Everything random is derived from
/// `(seed, step)`, so any step can be rebuilt independently.
pub fn prepare_batch(
    data: &PretrainData<'_>,
    normalizer: &FeatureNormalizer,
    config: &TrainConfig,
    step: u64,
) -> Result<Vec<BatchItem>> {
    let mut rng = seeded(derive_seed(config.seed, &[step]));
    (0..config.batch_size)
        .map(|b| {
            let i = rng.random_range(0..data.features.len());
            let f = &data.features[i];
            let t_full = f.len();
            let (start, len) = match config.crop_frames {
                Some(c) if c < t_full => (rng.random_range(0..=t_full - c), c),
                _ => (0, t_full),
            };
            let frames = normalizer.apply(&f.frames.slice(s![start..start + len, ..]).to_owned());
            let scores = data.scores[i].scores[start..start + len].to_vec();
            let plan_seed = derive_seed(config.seed, &[step, b as u64]);
            let plan = match (config.model.family, config.strategy) {
                (ModelFamily::Npc, _) => MaskPlan::empty(len),
                (ModelFamily::Transformer, MaskStrategy::Ems) => ems_mask_plan(
                    &scores,
                    &MaskConfig {
                        k_percent: config.k_percent,
                        span: config.span,
                        action_ratios: config.action_ratios,
                        tie_rule: TieRule::LowerIndexFirst,
                        seed: plan_seed,
                    },
                )?,
                (ModelFamily::Transformer, MaskStrategy::Uniform) => {
                    uniform_mask_plan(len, config.k_percent, config.span, &config.action_ratios, plan_seed)?
                }
            };
            Ok(BatchItem { frames, scores, plan })
        })
        .collect()
}

/// One optimizer update on `batch`; returns the batch-mean losses measured
/// before the update.
pub fn pretrain_step(
    model: &mut SslModel,
    adam: &mut Adam,
    batch: &[BatchItem],
    config: &TrainConfig,
    schedule_step: u64,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(EmsError::invalid("empty batch"));
    }
    let scope = config.scope();
    let mut acc = model.params.zeros_like();
    let (mut ls, mut lj, mut lv) = (0.0, 0.0, 0.0);
    let w = 1.0 / batch.len() as f64;
    for item in batch {
        let (g, total, l_score, l_joint, l_vq) = loss_graph(model, item, config.strategy, scope)?;
        if !g.scalar(total).is_finite() {
            return Err(EmsError::NonFinite(format!(
                "pre-training loss is {} (l_score {}, l_joint_input {})",
                g.scalar(total),
                g.scalar(l_score),
                g.scalar(l_joint)
            )));
        }
        g.backward(total).accumulate_into(&mut acc, w);
        ls += w * g.scalar(l_score);
        lj += w * g.scalar(l_joint);
        lv += l_vq.map_or(0.0, |v| w * g.scalar(v));
    }
    if acc.iter().any(|a| a.iter().any(|v| !v.is_finite())) {
        return Err(EmsError::NonFinite("non-finite gradient".into()));
    }
    adam.step(&mut model.params, &mut acc, schedule_step);
    let l_vq = (model.config.family == ModelFamily::Npc).then_some(lv);
    Ok(LossBreakdown::new(ls, lj, l_vq))
}

/// One JSON-lines record per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub l_score: f64,
    pub l_joint_input: f64,
    pub l_vq: Option<f64>,
    pub total: f64,
    pub wall_ms: u64,
    pub strategy: MaskStrategy,
    /// Set on the first step after a warm start, e.g. `"uniform->ems"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<String>,
}

impl MetricsRecord {
    /// The record without wall-clock time, for determinism comparisons.
    pub fn without_time(&self) -> Self {
        Self { wall_ms: 0, ..self.clone() }
    }
}

/// Records averaged for the start of a loss curve.
pub const SMOOTH_HEAD: usize = 10;
/// Records averaged for the end of a loss curve.
pub const SMOOTH_TAIL: usize = 100;

/// Mean total of the last `SMOOTH_TAIL` records over the mean of the first
/// `SMOOTH_HEAD`; `None` for an empty stream.
pub fn smoothed_loss_ratio(records: &[MetricsRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let avg = |r: &[MetricsRecord]| r.iter().map(|m| m.total).sum::<f64>() / r.len() as f64;
    let head = avg(&records[..SMOOTH_HEAD.min(records.len())]);
    let tail = avg(&records[records.len().saturating_sub(SMOOTH_TAIL)..]);
    Some(tail / head)
}

/// How a run starts.
#[derive(Clone, Copy, Debug, Default)]
pub enum StartFrom<'a> {
    #[default]
    Scratch,
    /// Continue an interrupted run: parameters, optimizer state and step.
    Resume(&'a Checkpoint),
    /// Load parameters only from a base run and train on with this config.
    WarmStart(&'a Checkpoint),
}

#[derive(Clone, Debug, Default)]
pub struct PretrainOptions<'a> {
    pub start: StartFrom<'a>,
    /// Directory for intermediate and final checkpoints; nothing is written when `None`.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub model: SslModel,
    pub adam: Adam,
    pub metrics: Vec<MetricsRecord>,
    /// Global step of the last update.
    pub step: u64,
}

const CKPT_STEP_KEY: &str = "adam_t";

/// Full training-state checkpoint: parameters plus optimizer moments.
pub fn training_checkpoint(model: &SslModel, adam: &Adam, step: u64, config: &TrainConfig) -> Result<Checkpoint> {
    let extra = serde_json::json!({
        CKPT_STEP_KEY: adam.t,
        "train_config": config,
    });
    let mut ckpt = model.to_checkpoint(step, Some(config.strategy.as_str()), extra)?;
    ckpt.blocks.extend(adam.blocks(&model.params));
    Ok(ckpt)
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step-{step:06}.ckpt"))
}

pub fn final_checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("final.ckpt")
}

fn parse_strategy(ckpt: &Checkpoint) -> Option<MaskStrategy> {
    ckpt.header.strategy.as_deref().and_then(|s| serde_json::from_value(serde_json::Value::String(s.into())).ok())
}

/// Runs `config.steps` further updates and streams one record per step to
/// `on_record`.
pub fn pretrain(
    data: &PretrainData<'_>,
    config: &TrainConfig,
    options: &PretrainOptions<'_>,
    mut on_record: impl FnMut(&MetricsRecord) -> Result<()>,
) -> Result<PretrainOutcome> {
    config.validate()?;
    data.validate()?;
    if let Some(c) = config.crop_frames.filter(|_| config.model.family == ModelFamily::Npc) {
        let (_, big_r) = crate::models::receptive_field(&config.model.npc);
        if c < big_r {
            return Err(EmsError::Config(format!("crop_frames {c} is shorter than the receptive field {big_r}")));
        }
    }
    let mut model = SslModel::new(config.model.clone())?;
    let mut adam = Adam::new(config.adam.clone(), &model.params);
    let mut first_step = 1;
    let mut schedule_offset = 0;
    let mut transition = None;
    match options.start {
        StartFrom::Scratch => model.normalizer = FeatureNormalizer::fit(data.features),
        StartFrom::Resume(ckpt) => {
            model.load_checkpoint(ckpt)?;
            if parse_strategy(ckpt) != Some(config.strategy) {
                return Err(EmsError::Checkpoint(format!(
                    "cannot resume a {:?} run with strategy {}",
                    ckpt.header.strategy,
                    config.strategy.as_str()
                )));
            }
            let t = ckpt.header.extra.get(CKPT_STEP_KEY).and_then(|v| v.as_u64()).unwrap_or(ckpt.header.step);
            adam.load_blocks(&model.params, &ckpt.blocks, t)?;
            first_step = ckpt.header.step + 1;
        }
        StartFrom::WarmStart(ckpt) => {
            model.load_checkpoint(ckpt)?;
            first_step = ckpt.header.step + 1;
            schedule_offset = ckpt.header.step;
            let from = ckpt.header.strategy.clone().unwrap_or_else(|| "unknown".into());
            transition = Some(format!("{from}->{}", config.strategy.as_str()));
        }
    }
    if let Some(dir) = &options.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| EmsError::io(dir, e))?;
    }
    let last_step = first_step + config.steps - 1;
    let start = Instant::now();
    let mut metrics = Vec::with_capacity(config.steps as usize);
    for step in first_step..=last_step {
        let batch = prepare_batch(data, &model.normalizer, config, step)?;
        let losses =
            pretrain_step(&mut model, &mut adam, &batch, config, step - 1 - schedule_offset).map_err(|e| match e {
                EmsError::NonFinite(m) => EmsError::NonFinite(format!("step {step}: {m}")),
                other => other,
            })?;
        let record = MetricsRecord {
            step,
            l_score: losses.l_score,
            l_joint_input: losses.l_joint_input,
            l_vq: losses.l_vq,
            total: losses.total,
            wall_ms: start.elapsed().as_millis() as u64,
            strategy: config.strategy,
            transition: if step == first_step { transition.take() } else { None },
        };
        on_record(&record)?;
        metrics.push(record);
        if let Some(dir) = &options.checkpoint_dir {
            if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 {
                checkpoint::save(&checkpoint_path(dir, step), &training_checkpoint(&model, &adam, step, config)?)?;
            }
        }
    }
    let step = first_step - 1 + config.steps;
    if let Some(dir) = &options.checkpoint_dir {
        checkpoint::save(&final_checkpoint_path(dir), &training_checkpoint(&model, &adam, step, config)?)?;
    }
    Ok(PretrainOutcome { model, adam, metrics, step })
}
