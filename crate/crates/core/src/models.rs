//! The two self-supervised encoders: a bidirectional transformer with
//! input-frame masking and a masked-convolution predictive-coding network
//! with a vector-quantization bottleneck.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat, Var};
use crate::checkpoint::{self, Checkpoint, CheckpointHeader, CHECKPOINT_VERSION};
use crate::error::{EmsError, Result};
use crate::intensity::{IntensityTrack, ScoreAligner};
use crate::masking::{center_param_for_mask_size, KernelMaskSpec};
use crate::nn::{Conv1d, LayerNorm, Linear};
use crate::params::{ParamId, ParamStore};
use crate::rng::seeded;
use crate::stats::FeatureNormalizer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Transformer,
    Npc,
}

impl ModelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Transformer => "transformer",
            Self::Npc => "npc",
        }
    }
}

/// How intensity embeddings enter the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// `x_t + e(s_t)`
    Joint,
    /// `[x_t ‖ e(s_t)]`
    Separate,
}

impl InputMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Joint => "joint",
            Self::Separate => "separate",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformerConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub positional_encoding: bool,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self { layers: 3, d_model: 128, heads: 4, ff_dim: 512, positional_encoding: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NpcConfig {
    pub conv_blocks: usize,
    pub conv_kernel: usize,
    pub d_model: usize,
    pub masked_kernel: usize,
    /// Number of central taps removed from the masked kernel (rounded up to even).
    pub mask_size: usize,
    /// Window stride for locating the intensity-selected tap; `None` uses the kernel size.
    pub ems_stride: Option<usize>,
    pub d_code: usize,
    pub codebook_size: usize,
    pub commitment: f64,
}

impl Default for NpcConfig {
    fn default() -> Self {
        Self {
            conv_blocks: 2,
            conv_kernel: 3,
            d_model: 128,
            masked_kernel: 15,
            mask_size: 5,
            ems_stride: None,
            d_code: 64,
            codebook_size: 64,
            commitment: 0.25,
        }
    }
}

impl NpcConfig {
    pub fn center_param(&self) -> usize {
        center_param_for_mask_size(self.mask_size)
    }

    pub fn stride(&self) -> usize {
        self.ems_stride.unwrap_or(self.masked_kernel)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub family: ModelFamily,
    pub input_dim: usize,
    pub input_mode: InputMode,
    pub transformer: TransformerConfig,
    pub npc: NpcConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: ModelFamily::Transformer,
            input_dim: 40,
            input_mode: InputMode::Joint,
            transformer: TransformerConfig::default(),
            npc: NpcConfig::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EmsError::Config(m));
        if self.input_dim == 0 {
            return bad("input_dim must be positive".into());
        }
        match self.family {
            ModelFamily::Transformer => {
                let t = &self.transformer;
                if t.layers == 0 || t.d_model == 0 || t.heads == 0 || t.ff_dim == 0 {
                    return bad("transformer dimensions must be positive".into());
                }
                if t.d_model % t.heads != 0 {
                    return bad(format!("d_model {} is not divisible by {} heads", t.d_model, t.heads));
                }
            }
            ModelFamily::Npc => {
                let n = &self.npc;
                if n.d_model == 0 || n.d_code == 0 || n.codebook_size == 0 {
                    return bad("npc dimensions and codebook size must be positive".into());
                }
                if n.conv_kernel % 2 == 0 {
                    return bad(format!("npc conv_kernel must be odd, got {}", n.conv_kernel));
                }
                if n.mask_size == 0 || n.ems_stride == Some(0) || !(n.commitment >= 0.0) {
                    return bad("npc mask_size and ems_stride must be positive, commitment non-negative".into());
                }
                KernelMaskSpec::new(n.masked_kernel, n.center_param(), n.d_model, n.stride())
                    .map_err(|e| EmsError::Config(e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Width of the encoder input: `d` for joint input, `2d` for separate.
    pub fn input_width(&self) -> usize {
        match self.input_mode {
            InputMode::Joint => self.input_dim,
            InputMode::Separate => 2 * self.input_dim,
        }
    }

    /// Width of the hidden representation `H`.
    pub fn hidden_dim(&self) -> usize {
        match self.family {
            ModelFamily::Transformer => self.transformer.d_model,
            ModelFamily::Npc => self.npc.d_model,
        }
    }

    /// Fields that fix parameter shapes, i.e. everything except the seed and
    /// the configuration of the unused family.
    pub fn architecture(&self) -> serde_json::Value {
        let family = match self.family {
            ModelFamily::Transformer => serde_json::to_value(&self.transformer),
            ModelFamily::Npc => serde_json::to_value(&self.npc),
        }
        .expect("plain struct");
        serde_json::json!({
            "family": self.family,
            "input_dim": self.input_dim,
            "input_mode": self.input_mode,
            "encoder": family,
        })
    }
}

/// `R = 2r + 1` for the NPC stack: radii of the stacked convolutions add.
pub fn receptive_field(config: &NpcConfig) -> (usize, usize) {
    let r = config.conv_blocks * (config.conv_kernel - 1) / 2 + (config.masked_kernel - 1) / 2;
    (r, 2 * r + 1)
}

/// Result of nearest-neighbour quantization.
#[derive(Clone, Debug, PartialEq)]
pub struct VqOutput {
    pub quantized: Mat,
    pub indices: Vec<usize>,
    /// Mean squared distance per element; drives the encoder towards its codes.
    pub commitment_loss: f64,
    /// Same quantity seen from the codebook side (equal in value, different gradient path).
    pub codebook_loss: f64,
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Maps every row of `z` to its nearest codebook row (Euclidean, lowest
/// index on ties).
pub fn vq_quantize(z: &Mat, codebook: &Mat) -> Result<VqOutput> {
    if codebook.nrows() == 0 {
        return Err(EmsError::invalid("codebook is empty"));
    }
    if codebook.ncols() != z.ncols() {
        return Err(EmsError::dims(format!("codebook width {} vs latent width {}", codebook.ncols(), z.ncols())));
    }
    let indices: Vec<usize> = z
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = (0, f64::INFINITY);
            for (c, code) in codebook.rows().into_iter().enumerate() {
                let d = sq_dist(row, code);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best.0
        })
        .collect();
    let quantized = Array2::from_shape_fn(z.dim(), |(t, j)| codebook[[indices[t], j]]);
    let mse = if z.is_empty() { 0.0 } else { (z - &quantized).mapv(|v| v * v).sum() / z.len() as f64 };
    Ok(VqOutput { quantized, indices, commitment_loss: mse, codebook_loss: mse })
}

#[derive(Clone, Debug)]
struct TransformerLayer {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    ln2: LayerNorm,
}

#[derive(Clone, Debug)]
enum Encoder {
    Transformer(Vec<TransformerLayer>),
    Npc {
        blocks: Vec<(Conv1d, LayerNorm)>,
        masked: Conv1d,
        masked_ln: LayerNorm,
        mask: KernelMaskSpec,
        to_code: Linear,
        codebook: ParamId,
    },
}

/// Joint-input head (two-layer feed-forward for the transformer, a linear
/// projection for NPC) and a linear score head.
#[derive(Clone, Debug)]
pub struct PredictionHeads {
    pub joint: Vec<Linear>,
    pub score: Linear,
}

impl PredictionHeads {
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, h: Var) -> (Var, Var) {
        let mut j = h;
        for (i, lin) in self.joint.iter().enumerate() {
            if i > 0 {
                j = g.gelu(j);
            }
            j = lin.forward(g, store, j);
        }
        let s = self.score.forward(g, store, h);
        (s, j)
    }
}

/// Which kernel mask the NPC masked convolution uses.
#[derive(Clone, Copy, Debug)]
pub enum KernelMode<'a> {
    Base,
    /// Additionally zero the tap picked from these per-frame scores.
    Ems(&'a [f64]),
}

/// Graph handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub hidden: Var,
    /// `T×1`
    pub score_pred: Var,
    /// `T×input_width`
    pub joint_pred: Var,
    /// NPC only: `codebook_loss + commitment·commitment_loss`.
    pub vq_loss: Option<Var>,
}

/// Frozen forward-pass values for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Representation {
    pub h: Mat,
    pub score_pred: Vec<f64>,
    pub joint_pred: Mat,
}

/// One self-supervised model: score aligner, encoder and prediction heads
/// sharing a parameter store.
#[derive(Clone, Debug)]
pub struct SslModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub normalizer: FeatureNormalizer,
    pub aligner: ScoreAligner,
    input_proj: Linear,
    encoder: Encoder,
    pub heads: PredictionHeads,
}

fn positional_encoding(t_len: usize, d: usize) -> Mat {
    Array2::from_shape_fn((t_len, d), |(t, j)| {
        let angle = t as f64 / 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

impl SslModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(config.seed);
        let mut p = ParamStore::new();
        let aligner = ScoreAligner::new(&mut p, "aligner", config.input_dim, true, &mut rng);
        let width = config.input_width();
        let d_model = config.hidden_dim();
        let input_proj = Linear::new(&mut p, "input_proj", width, d_model, true, &mut rng);
        let (encoder, heads) = match config.family {
            ModelFamily::Transformer => {
                let t = &config.transformer;
                let layers = (0..t.layers)
                    .map(|l| TransformerLayer {
                        wq: Linear::new(&mut p, &format!("layer{l}.q"), d_model, d_model, true, &mut rng),
                        wk: Linear::new(&mut p, &format!("layer{l}.k"), d_model, d_model, true, &mut rng),
                        wv: Linear::new(&mut p, &format!("layer{l}.v"), d_model, d_model, true, &mut rng),
                        wo: Linear::new(&mut p, &format!("layer{l}.o"), d_model, d_model, true, &mut rng),
                        ln1: LayerNorm::new(&mut p, &format!("layer{l}.ln1"), d_model),
                        ff1: Linear::new(&mut p, &format!("layer{l}.ff1"), d_model, t.ff_dim, true, &mut rng),
                        ff2: Linear::new(&mut p, &format!("layer{l}.ff2"), t.ff_dim, d_model, true, &mut rng),
                        ln2: LayerNorm::new(&mut p, &format!("layer{l}.ln2"), d_model),
                    })
                    .collect();
                let heads = PredictionHeads {
                    joint: vec![
                        Linear::new(&mut p, "head.joint1", d_model, d_model, true, &mut rng),
                        Linear::new(&mut p, "head.joint2", d_model, width, true, &mut rng),
                    ],
                    score: Linear::new(&mut p, "head.score", d_model, 1, true, &mut rng),
                };
                (Encoder::Transformer(layers), heads)
            }
            ModelFamily::Npc => {
                let n = &config.npc;
                let blocks = (0..n.conv_blocks)
                    .map(|b| {
                        (
                            Conv1d::new(&mut p, &format!("block{b}.conv"), d_model, d_model, n.conv_kernel, &mut rng),
                            LayerNorm::new(&mut p, &format!("block{b}.ln"), d_model),
                        )
                    })
                    .collect();
                let masked = Conv1d::new(&mut p, "masked.conv", d_model, d_model, n.masked_kernel, &mut rng);
                let masked_ln = LayerNorm::new(&mut p, "masked.ln", d_model);
                let mask = KernelMaskSpec::new(n.masked_kernel, n.center_param(), d_model, n.stride())?;
                let to_code = Linear::new(&mut p, "vq.proj", d_model, n.d_code, true, &mut rng);
                let codebook = p.add_normal("vq.codebook", n.codebook_size, n.d_code, 1.0, &mut rng);
                let heads = PredictionHeads {
                    joint: vec![Linear::new(&mut p, "head.joint", n.d_code, width, true, &mut rng)],
                    score: Linear::new(&mut p, "head.score", n.d_code, 1, true, &mut rng),
                };
                (Encoder::Npc { blocks, masked, masked_ln, mask, to_code, codebook }, heads)
            }
        };
        let normalizer = FeatureNormalizer::identity(config.input_dim);
        Ok(Self { config, params: p, normalizer, aligner, input_proj, encoder, heads })
    }

    pub fn architecture_hash(&self) -> Result<String> {
        checkpoint::architecture_hash(&self.config.architecture())
    }

    /// Kernel mask spec of the NPC masked block.
    pub fn kernel_mask(&self) -> Option<&KernelMaskSpec> {
        match &self.encoder {
            Encoder::Npc { mask, .. } => Some(mask),
            Encoder::Transformer(_) => None,
        }
    }

    /// Parameter id of the masked convolution weight (NPC only).
    pub fn masked_conv_weight(&self) -> Option<ParamId> {
        match &self.encoder {
            Encoder::Npc { masked, .. } => Some(masked.weight),
            Encoder::Transformer(_) => None,
        }
    }

    pub fn codebook(&self) -> Option<ParamId> {
        match &self.encoder {
            Encoder::Npc { codebook, .. } => Some(*codebook),
            Encoder::Transformer(_) => None,
        }
    }

    /// Builds `(x + e(s))` or `[x ‖ e(s)]` in the graph from normalized
    /// frames and per-frame scores.
    pub fn build_input(&self, g: &mut Graph, frames: &Mat, scores: &[f64]) -> Result<Var> {
        if frames.ncols() != self.config.input_dim {
            return Err(EmsError::dims(format!(
                "frames have d={}, model expects {}",
                frames.ncols(),
                self.config.input_dim
            )));
        }
        if scores.len() != frames.nrows() {
            return Err(EmsError::dims(format!("{} scores for {} frames", scores.len(), frames.nrows())));
        }
        let x = g.constant(frames.clone());
        let s = g.constant(Array2::from_shape_vec((scores.len(), 1), scores.to_vec()).expect("T×1"));
        let e = self.aligner.embed(g, &self.params, s);
        Ok(match self.config.input_mode {
            InputMode::Joint => g.add(x, e),
            InputMode::Separate => g.concat_cols(&[x, e]),
        })
    }

    fn check_input(&self, g: &Graph, input: Var) -> Result<usize> {
        let (t, w) = g.value(input).dim();
        if w != self.config.input_width() {
            return Err(EmsError::dims(format!("encoder input width {w}, expected {}", self.config.input_width())));
        }
        if t == 0 {
            return Err(EmsError::invalid("encoder input has no frames"));
        }
        Ok(t)
    }

    /// Encoder plus heads on an already built (and, for the transformer,
    /// already masked) input of width `input_width`.
    pub fn forward(&self, g: &mut Graph, input: Var, kernel: KernelMode<'_>) -> Result<ForwardOutput> {
        let t_len = self.check_input(g, input)?;
        let p = &self.params;
        let mut h = self.input_proj.forward(g, p, input);
        match &self.encoder {
            Encoder::Transformer(layers) => {
                let tc = &self.config.transformer;
                if tc.positional_encoding {
                    let pe = g.constant(positional_encoding(t_len, tc.d_model));
                    h = g.add(h, pe);
                }
                let dk = tc.d_model / tc.heads;
                for layer in layers {
                    let q = layer.wq.forward(g, p, h);
                    let k = layer.wk.forward(g, p, h);
                    let v = layer.wv.forward(g, p, h);
                    let heads: Vec<Var> = (0..tc.heads)
                        .map(|i| {
                            let qi = g.slice_cols(q, i * dk, dk);
                            let ki = g.slice_cols(k, i * dk, dk);
                            let vi = g.slice_cols(v, i * dk, dk);
                            let s = g.matmul_nt(qi, ki);
                            let s = g.scale(s, 1.0 / (dk as f64).sqrt());
                            let a = g.softmax_rows(s);
                            g.matmul(a, vi)
                        })
                        .collect();
                    let att = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
                    let att = layer.wo.forward(g, p, att);
                    let r = g.add(h, att);
                    h = layer.ln1.forward(g, p, r);
                    let f = layer.ff1.forward(g, p, h);
                    let f = g.gelu(f);
                    let f = layer.ff2.forward(g, p, f);
                    let r = g.add(h, f);
                    h = layer.ln2.forward(g, p, r);
                }
                let (score_pred, joint_pred) = self.heads.forward(g, p, h);
                Ok(ForwardOutput { hidden: h, score_pred, joint_pred, vq_loss: None })
            }
            Encoder::Npc { blocks, masked, masked_ln, mask, to_code, codebook } => {
                let (_, big_r) = receptive_field(&self.config.npc);
                if t_len < big_r {
                    return Err(EmsError::invalid(format!(
                        "sequence of {t_len} frames is shorter than the receptive field {big_r}"
                    )));
                }
                for (conv, ln) in blocks {
                    let c = conv.forward(g, p, h);
                    let c = g.gelu(c);
                    let r = g.add(h, c);
                    h = ln.forward(g, p, r);
                }
                let d_eff = match kernel {
                    KernelMode::Base => mask.effective(None)?,
                    KernelMode::Ems(scores) => {
                        if scores.len() != t_len {
                            return Err(EmsError::dims(format!("{} scores for {t_len} frames", scores.len())));
                        }
                        mask.effective(Some(scores))?
                    }
                };
                let m = masked.forward_masked(g, p, h, &d_eff);
                let hidden = masked_ln.forward(g, p, m);
                let z = to_code.forward(g, p, hidden);
                let cb = g.param(p, *codebook);
                let vq = vq_quantize(g.value(z), g.value(cb))?;
                let q = g.straight_through(z, vq.quantized.clone());
                // codebook term pulls selected codes towards a frozen z; the
                // commitment term pulls z towards frozen codes
                let chosen = g.gather_rows(cb, vq.indices.iter().map(|&i| Some(i)).collect());
                let z_frozen = g.constant(g.value(z).clone());
                let dc = g.sub(chosen, z_frozen);
                let dc = g.square(dc);
                let codebook_loss = g.mean_all(dc);
                let q_frozen = g.constant(vq.quantized);
                let dz = g.sub(z, q_frozen);
                let dz = g.square(dz);
                let commit = g.mean_all(dz);
                let commit = g.scale(commit, self.config.npc.commitment);
                let vq_loss = g.add(codebook_loss, commit);
                let (score_pred, joint_pred) = self.heads.forward(g, p, q);
                Ok(ForwardOutput { hidden, score_pred, joint_pred, vq_loss: Some(vq_loss) })
            }
        }
    }

    pub fn to_checkpoint(&self, step: u64, strategy: Option<&str>, extra: serde_json::Value) -> Result<Checkpoint> {
        let mut extra = if extra.is_object() { extra } else { serde_json::json!({}) };
        extra["normalizer"] = serde_json::to_value(&self.normalizer)?;
        let header = CheckpointHeader {
            kind: "ssl".into(),
            version: CHECKPOINT_VERSION,
            architecture_hash: self.architecture_hash()?,
            seed: self.config.seed,
            step,
            strategy: strategy.map(str::to_string),
            config: serde_json::to_value(&self.config)?,
            extra,
        };
        Ok(Checkpoint { header, blocks: self.params.blocks() })
    }

    /// Rebuilds a model from a checkpoint's own config.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(ckpt.header.config.clone())
            .map_err(|e| EmsError::Checkpoint(format!("bad model config: {e}")))?;
        let mut model = Self::new(config)?;
        model.load_checkpoint(ckpt)?;
        Ok(model)
    }

    /// Loads parameters (and the normalizer) after checking the checkpoint
    /// was produced by the same architecture.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.header.kind != "ssl" {
            return Err(EmsError::ArchitectureMismatch(format!(
                "expected an ssl checkpoint, found {:?}",
                ckpt.header.kind
            )));
        }
        let ours = self.architecture_hash()?;
        if ours != ckpt.header.architecture_hash {
            return Err(EmsError::ArchitectureMismatch(format!(
                "checkpoint architecture {} does not match configured architecture {}",
                &ckpt.header.architecture_hash[..12.min(ckpt.header.architecture_hash.len())],
                &ours[..12]
            )));
        }
        self.params.load_blocks(&ckpt.blocks)?;
        if let Some(norm) = ckpt.header.extra.get("normalizer") {
            self.normalizer = serde_json::from_value(norm.clone())
                .map_err(|e| EmsError::Checkpoint(format!("bad normalizer: {e}")))?;
        }
        Ok(())
    }
}

fn finish(model: &SslModel, g: &Graph, out: ForwardOutput) -> Result<Representation> {
    let h = g.value(out.hidden).clone();
    let score_pred: Vec<f64> = g.value(out.score_pred).iter().copied().collect();
    let joint_pred = g.value(out.joint_pred).clone();
    if !(h.iter().all(|v| v.is_finite())
        && score_pred.iter().all(|v| v.is_finite())
        && joint_pred.iter().all(|v| v.is_finite()))
    {
        return Err(EmsError::NonFinite(format!(
            "{} encoder produced non-finite activations",
            model.config.family.as_str()
        )));
    }
    Ok(Representation { h, score_pred, joint_pred })
}

/// Transformer forward pass on a prepared (masked) input of width
/// `input_width`.
pub fn encode_transformer(model: &SslModel, masked_input: &Mat) -> Result<Representation> {
    if model.config.family != ModelFamily::Transformer {
        return Err(EmsError::invalid("encode_transformer needs a transformer model"));
    }
    let mut g = Graph::new();
    let x = g.constant(masked_input.clone());
    let out = model.forward(&mut g, x, KernelMode::Base)?;
    finish(model, &g, out)
}

/// NPC forward pass; with `ems_enabled` the kernel tap picked from `scores`
/// is zeroed on top of the static mask.
pub fn encode_npc(model: &SslModel, input: &Mat, scores: &IntensityTrack, ems_enabled: bool) -> Result<Representation> {
    if model.config.family != ModelFamily::Npc {
        return Err(EmsError::invalid("encode_npc needs an npc model"));
    }
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let mode = if ems_enabled { KernelMode::Ems(&scores.scores) } else { KernelMode::Base };
    let out = model.forward(&mut g, x, mode)?;
    finish(model, &g, out)
}

/// Applies the prediction heads to a given `H` (for NPC, after the VQ
/// bottleneck, as in training).
pub fn predict_heads(model: &SslModel, h: &Mat) -> Result<(Vec<f64>, Mat)> {
    if h.ncols() != model.config.hidden_dim() {
        return Err(EmsError::dims(format!(
            "H has width {}, model hidden width is {}",
            h.ncols(),
            model.config.hidden_dim()
        )));
    }
    if !h.iter().all(|v| v.is_finite()) {
        return Err(EmsError::NonFinite("H contains non-finite values".into()));
    }
    let p = &model.params;
    let mut g = Graph::new();
    let mut x = g.constant(h.clone());
    if let Encoder::Npc { to_code, codebook, .. } = &model.encoder {
        let z = to_code.forward(&mut g, p, x);
        let q = vq_quantize(g.value(z), p.get(*codebook))?.quantized;
        x = g.constant(q);
    }
    let (s, j) = model.heads.forward(&mut g, p, x);
    Ok((g.value(s).iter().copied().collect(), g.value(j).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn receptive_field_examples() {
        let one = NpcConfig { conv_blocks: 0, masked_kernel: 5, ..NpcConfig::default() };
        assert_eq!(receptive_field(&one), (2, 5));
        let two = NpcConfig { conv_blocks: 1, conv_kernel: 3, masked_kernel: 3, ..NpcConfig::default() };
        assert_eq!(receptive_field(&two), (2, 5));
        assert_eq!(receptive_field(&NpcConfig::default()), (9, 19));
    }

    #[test]
    fn vq_examples() {
        let cb = Array2::from_shape_fn((5, 3), |(r, c)| (r * 3 + c) as f64 * 0.5);
        let z = cb.slice(ndarray::s![3..4, ..]).to_owned();
        let out = vq_quantize(&z, &cb).unwrap();
        assert_eq!(out.indices, vec![3]);
        assert_eq!(out.commitment_loss, 0.0);
        let single = Array2::from_elem((1, 3), 9.0);
        let z = Array2::from_shape_fn((4, 3), |(r, c)| (r + c) as f64);
        assert_eq!(vq_quantize(&z, &single).unwrap().indices, vec![0; 4]);
        assert!(vq_quantize(&z, &Array2::zeros((0, 3))).is_err());
    }

    #[test]
    fn positional_encoding_starts_with_sin_cos() {
        let pe = positional_encoding(3, 4);
        assert_eq!(pe[[0, 0]], 0.0);
        assert_eq!(pe[[0, 1]], 1.0);
        assert!((pe[[1, 0]] - 1f64.sin()).abs() < 1e-15);
        assert!((pe[[1, 2]] - (0.01f64).sin()).abs() < 1e-15);
    }

    #[test]
    fn separate_mode_widens_projection() {
        let cfg = ModelConfig { input_mode: InputMode::Separate, input_dim: 6, ..ModelConfig::default() };
        assert_eq!(cfg.input_width(), 12);
        let joint = ModelConfig { input_dim: 6, ..ModelConfig::default() };
        assert_ne!(
            checkpoint::architecture_hash(&cfg.architecture()).unwrap(),
            checkpoint::architecture_hash(&joint.architecture()).unwrap()
        );
        let reseeded = ModelConfig { seed: 9, ..joint.clone() };
        assert_eq!(joint.architecture(), reseeded.architecture());
    }
}
