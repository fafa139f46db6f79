//! Gradient-check cases shared by the gradient tests and the acceptance run.

use super::{grad_check, random_matrix, random_sequence, GradReport};
use ems_core::autograd::Graph;
use ems_core::corpus::Emotion;
use ems_core::intensity::{ExtractorConfig, IntensityExtractor};
use ems_core::masking::{uniform_mask_plan, ActionRatios};
use ems_core::models::{KernelMode, ModelConfig, ModelFamily, NpcConfig, SslModel, TransformerConfig};
use ems_core::training::{loss_graph, BatchItem, LossScope, MaskStrategy};

/// Largest accepted relative error.
pub const TOL: f64 = 1e-4;

pub fn tiny_transformer() -> ModelConfig {
    ModelConfig {
        family: ModelFamily::Transformer,
        input_dim: 4,
        transformer: TransformerConfig { layers: 2, d_model: 16, heads: 2, ff_dim: 32, positional_encoding: true },
        seed: 5,
        ..ModelConfig::default()
    }
}

pub fn tiny_npc() -> ModelConfig {
    ModelConfig {
        family: ModelFamily::Npc,
        input_dim: 4,
        npc: NpcConfig {
            conv_blocks: 2,
            conv_kernel: 3,
            d_model: 8,
            masked_kernel: 5,
            mask_size: 1,
            d_code: 4,
            codebook_size: 6,
            ..NpcConfig::default()
        },
        seed: 9,
        ..ModelConfig::default()
    }
}

/// The transformer training objective; also returns the gap between the
/// differenced objective and `loss_graph` on all frames.
pub fn transformer_objective() -> (GradReport, f64) {
    let mut model = SslModel::new(tiny_transformer()).unwrap();
    let t = 8;
    let scores: Vec<f64> = (0..t).map(|i| (i as f64 * 0.37).sin().abs()).collect();
    let item = BatchItem {
        frames: random_matrix(t, 4, 1),
        scores,
        plan: uniform_mask_plan(t, 40.0, 1, &ActionRatios { zero: 0.4, replace: 0.3, keep: 0.3 }, 3).unwrap(),
    };
    // The reconstruction target is detached from the aligner in training, so
    // the differenced objective holds it fixed at its initial value.
    let target = {
        let mut g = Graph::new();
        let input = model.build_input(&mut g, &item.frames, &item.scores).unwrap();
        g.value(input).clone()
    };
    let loss_of = |m: &SslModel, g: &mut Graph| {
        let input = m.build_input(g, &item.frames, &item.scores).unwrap();
        let masked = g.gather_rows(input, item.plan.row_sources());
        let out = m.forward(g, masked, KernelMode::Base).unwrap();
        let jt = g.constant(target.clone());
        let st = g.constant(ndarray::Array2::from_shape_vec((t, 1), item.scores.clone()).unwrap());
        let lj = g.l1_mean(out.joint_pred, jt);
        let ls = g.l1_mean(out.score_pred, st);
        g.add(lj, ls)
    };
    let loss = |m: &SslModel| {
        let mut g = Graph::new();
        let l = loss_of(m, &mut g);
        g.scalar(l)
    };
    let mut g = Graph::new();
    let l = loss_of(&model, &mut g);
    let mut analytic = model.params.zeros_like();
    g.backward(l).accumulate_into(&mut analytic, 1.0);
    // same objective as the training graph on all frames
    let (tg, total, ..) = loss_graph(&model, &item, MaskStrategy::Uniform, LossScope::AllFrames).unwrap();
    let gap = (tg.scalar(total) - g.scalar(l)).abs();
    (grad_check(&mut model, |m| &mut m.params, loss, &analytic, 1e-6), gap)
}

/// The NPC encoder up to the hidden state, then the heads on a fixed input.
pub fn npc_encoder_and_heads() -> (GradReport, GradReport) {
    // The VQ step is piecewise constant; the check covers everything up to
    // the hidden state and the heads separately.
    let mut model = SslModel::new(tiny_npc()).unwrap();
    let t = 12;
    let frames = random_matrix(t, 4, 2);
    let scores: Vec<f64> = (0..t).map(|i| ((i * 7 % 5) as f64) / 5.0).collect();
    let w_h = random_matrix(t, 8, 3);
    let loss_of = |m: &SslModel, g: &mut Graph| {
        let input = m.build_input(g, &frames, &scores).unwrap();
        let out = m.forward(g, input, KernelMode::Ems(&scores)).unwrap();
        let w = g.constant(w_h.clone());
        let p = g.mul(out.hidden, w);
        g.sum_all(p)
    };
    let loss = |m: &SslModel| {
        let mut g = Graph::new();
        let l = loss_of(m, &mut g);
        g.scalar(l)
    };
    let mut g = Graph::new();
    let l = loss_of(&model, &mut g);
    let mut analytic = model.params.zeros_like();
    g.backward(l).accumulate_into(&mut analytic, 1.0);
    let encoder = grad_check(&mut model, |m| &mut m.params, loss, &analytic, 1e-6);

    let q = random_matrix(t, 4, 4);
    let (w_s, w_j) = (random_matrix(t, 1, 5), random_matrix(t, 4, 6));
    let head_loss_of = |m: &SslModel, g: &mut Graph| {
        let x = g.constant(q.clone());
        let (s, j) = m.heads.forward(g, &m.params, x);
        let ws = g.constant(w_s.clone());
        let wj = g.constant(w_j.clone());
        let a = g.mul(s, ws);
        let b = g.mul(j, wj);
        let a = g.sum_all(a);
        let b = g.sum_all(b);
        g.add(a, b)
    };
    let head_loss = |m: &SslModel| {
        let mut g = Graph::new();
        let l = head_loss_of(m, &mut g);
        g.scalar(l)
    };
    let mut g = Graph::new();
    let l = head_loss_of(&model, &mut g);
    let mut analytic = model.params.zeros_like();
    g.backward(l).accumulate_into(&mut analytic, 1.0);
    (encoder, grad_check(&mut model, |m| &mut m.params, head_loss, &analytic, 1e-6))
}

pub fn extractor() -> GradReport {
    let config = ExtractorConfig {
        input_dim: 8,
        conv_layers: 2,
        conv_channels: 8,
        conv_kernel: 3,
        lstm_hidden: 4,
        fc_hidden: 6,
        seed: 11,
    };
    let mut model = IntensityExtractor::new(config).unwrap();
    let seq = random_sequence(6, 8, Emotion::Sad, 7);
    let (_, analytic) = model.loss_and_grads(&seq).unwrap();
    grad_check(&mut model, |m| &mut m.params, |m| m.loss(&seq).unwrap(), &analytic, 1e-6)
}
