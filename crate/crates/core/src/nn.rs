//! Layer building blocks shared by the extractor and both encoders.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Mat, Var};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add_xavier(format!("{name}.weight"), in_dim, out_dim, rng);
        let bias = bias.then(|| store.add_zeros(format!("{name}.bias"), 1, out_dim));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Per-frame layer normalization with learned gain and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add_ones(format!("{name}.gain"), 1, dim),
            shift: store.add_zeros(format!("{name}.shift"), 1, dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let n = g.layer_norm_rows(x);
        let gain = g.param(store, self.gain);
        let shift = g.param(store, self.shift);
        let y = g.mul_row(n, gain);
        g.add_row(y, shift)
    }
}

/// 1-D convolution over time with "same" zero padding. The weight is stored
/// flattened as `(kernel·in_dim)×out_dim`, row `i·in_dim + j` holding kernel
/// tap `i` of input channel `j`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(kernel % 2 == 1, "conv kernel must be odd");
        let weight = store.add_xavier(format!("{name}.weight"), kernel * in_dim, out_dim, rng);
        let bias = store.add_zeros(format!("{name}.bias"), 1, out_dim);
        Self { weight, bias, kernel, in_dim, out_dim }
    }

    pub fn radius(&self) -> usize {
        (self.kernel - 1) / 2
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        self.apply(g, store, x, w)
    }

    /// Convolution with `W ⊙ D`, where `tap_mask` is the `kernel×in_dim`
    /// binary mask `D`. The product is taken inside the graph, so masked
    /// taps receive exactly zero gradient.
    pub fn forward_masked(&self, g: &mut Graph, store: &ParamStore, x: Var, tap_mask: &Mat) -> Var {
        assert_eq!(tap_mask.dim(), (self.kernel, self.in_dim), "tap mask shape");
        let expanded = Array2::from_shape_fn((self.kernel * self.in_dim, self.out_dim), |(r, _)| {
            tap_mask[[r / self.in_dim, r % self.in_dim]]
        });
        let w = g.param(store, self.weight);
        let mask = g.constant(expanded);
        let w = g.mul(w, mask);
        self.apply(g, store, x, w)
    }

    fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var, w: Var) -> Var {
        let cols = g.unfold(x, self.kernel, self.radius());
        let y = g.matmul(cols, w);
        let b = g.param(store, self.bias);
        g.add_row(y, b)
    }
}

/// One bidirectional LSTM layer; output is `[forward ‖ backward]`, `T×2h`.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub fwd_in: Linear,
    pub fwd_rec: ParamId,
    pub bwd_in: Linear,
    pub bwd_rec: ParamId,
    pub hidden: usize,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let fwd_in = Linear::new(store, &format!("{name}.fwd.input"), in_dim, 4 * hidden, true, rng);
        let fwd_rec = store.add_xavier(format!("{name}.fwd.recurrent"), hidden, 4 * hidden, rng);
        let bwd_in = Linear::new(store, &format!("{name}.bwd.input"), in_dim, 4 * hidden, true, rng);
        let bwd_rec = store.add_xavier(format!("{name}.bwd.recurrent"), hidden, 4 * hidden, rng);
        Self { fwd_in, fwd_rec, bwd_in, bwd_rec, hidden }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let pf = self.fwd_in.forward(g, store, x);
        let wf = g.param(store, self.fwd_rec);
        let hf = g.lstm(pf, wf, false);
        let pb = self.bwd_in.forward(g, store, x);
        let wb = g.param(store, self.bwd_rec);
        let hb = g.lstm(pb, wb, true);
        g.concat_cols(&[hf, hb])
    }
}
