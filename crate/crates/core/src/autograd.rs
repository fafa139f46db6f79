//! A small tape-based reverse-mode differentiation engine over row-major
//! `f64` matrices.
//!
//! Every model in this crate builds one [`Graph`] per utterance, reads its
//! parameters from a [`ParamStore`], and calls [`Graph::backward`] on a
//! scalar loss node. Sequences are always `T×d` matrices with one frame per
//! row, so operations that mix information across time (attention, the
//! unfold used by convolutions, the recurrent scan) are explicit ops here.

use ndarray::{concatenate, s, Array2, Axis};

use crate::params::{ParamId, ParamStore};

pub type Mat = Array2<f64>;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_COEF: f64 = 0.044_715;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Abs(Var),
    Square(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNormRows(Var),
    SliceCols(Var, usize, usize),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<Option<usize>>),
    MeanRows(Var),
    SumAll(Var),
    MeanAll(Var),
    Unfold { input: Var, kernel: usize, pad: usize },
    Lstm { input: Var, recurrent: Var, reverse: bool },
    StraightThrough(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Mat,
    aux: Vec<Mat>,
}

/// The computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a graph.
#[derive(Debug)]
pub struct Gradients {
    by_node: Vec<Option<Mat>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, var: Var) -> Option<&Mat> {
        self.by_node[var.0].as_ref()
    }

    /// Accumulated gradient for each parameter that took part in the graph.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Mat)> + '_ {
        self.params.iter().filter_map(move |(id, var)| self.by_node[var.0].as_ref().map(|g| (*id, g)))
    }

    /// Adds parameter gradients into `acc` (shaped like the store), scaled by `weight`.
    pub fn accumulate_into(&self, acc: &mut [Mat], weight: f64) {
        for (id, g) in self.params() {
            acc[id.index()].scaled_add(weight, g);
        }
    }
}

fn layer_norm_eps() -> f64 {
    1e-5
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * x * x)
}

fn softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn scalar(v: f64) -> Mat {
    Array2::from_elem((1, 1), v)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Mat {
        &self.nodes[var.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, var: Var) -> f64 {
        let v = self.value(var);
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    fn push(&mut self, op: Op, value: Mat) -> Var {
        self.push_aux(op, value, Vec::new())
    }

    fn push_aux(&mut self, op: Op, value: Mat, aux: Vec<Mat>) -> Var {
        self.nodes.push(Node { op, value, aux });
        Var(self.nodes.len() - 1)
    }

    /// A constant input (its gradient is still computed, see [`Gradients::wrt`]).
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(Op::Param(id), store.get(id).clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(Op::MatMulNT(a, b), v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v)
    }

    /// Adds a `1×m` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(Op::AddRow(a, row), v)
    }

    /// Multiplies every row of `a` element-wise by a `1×m` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) * self.value(row);
        self.push(Op::MulRow(a, row), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(Op::Scale(a, c), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(Op::Gelu(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::abs);
        self.push(Op::Abs(a), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(Op::Square(a), v)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(Op::SoftmaxRows(a), v)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        self.push(Op::LogSoftmaxRows(a), v)
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let cols = x.ncols() as f64;
        let mut out = x.clone();
        let mut inv_std = Array2::zeros((x.nrows(), 1));
        for (r, mut row) in out.rows_mut().into_iter().enumerate() {
            let mean = row.sum() / cols;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols;
            let inv = 1.0 / (var + layer_norm_eps()).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std[[r, 0]] = inv;
        }
        self.push_aux(Op::LayerNormRows(a), out, vec![inv_std])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(Op::SliceCols(a, start, len), v)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    /// Builds a matrix whose row `i` is `a[rows[i]]`, or zeros for `None`.
    pub fn gather_rows(&mut self, a: Var, rows: Vec<Option<usize>>) -> Var {
        let x = self.value(a);
        let mut v = Array2::zeros((rows.len(), x.ncols()));
        for (i, src) in rows.iter().enumerate() {
            if let Some(src) = *src {
                v.row_mut(i).assign(&x.row(src));
            }
        }
        self.push(Op::GatherRows(a, rows), v)
    }

    /// Mean over rows, producing `1×m`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = x.mean_axis(Axis(0)).expect("mean_rows of empty matrix").insert_axis(Axis(0));
        self.push(Op::MeanRows(a), v)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = scalar(self.value(a).sum());
        self.push(Op::SumAll(a), v)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = scalar(x.sum() / x.len() as f64);
        self.push(Op::MeanAll(a), v)
    }

    /// im2col for a 1-D convolution over rows: output row `t` holds input
    /// rows `t - pad .. t - pad + kernel` side by side (zeros outside).
    pub fn unfold(&mut self, a: Var, kernel: usize, pad: usize) -> Var {
        let x = self.value(a);
        let (t_len, d) = x.dim();
        let out_len = (t_len + 2 * pad + 1).saturating_sub(kernel);
        let mut v = Array2::zeros((out_len, kernel * d));
        for t in 0..out_len {
            for k in 0..kernel {
                let src = t + k;
                if src < pad || src - pad >= t_len {
                    continue;
                }
                v.slice_mut(s![t, k * d..(k + 1) * d]).assign(&x.row(src - pad));
            }
        }
        self.push(Op::Unfold { input: a, kernel, pad }, v)
    }

    /// Single-direction LSTM scan.
    ///
    /// `input` holds the input-side gate pre-activations (`T×4h`, gate order
    /// input, forget, cell, output) and `recurrent` the `h×4h` hidden-to-gate
    /// weights. Output is `T×h` in the original time order.
    pub fn lstm(&mut self, input: Var, recurrent: Var, reverse: bool) -> Var {
        let pre = self.value(input);
        let w_hh = self.value(recurrent);
        let t_len = pre.nrows();
        let hidden = w_hh.nrows();
        assert_eq!(pre.ncols(), 4 * hidden, "lstm: gate width mismatch");
        let mut gates = Array2::zeros((t_len, 4 * hidden));
        let mut cells = Array2::zeros((t_len, hidden));
        let mut out = Array2::zeros((t_len, hidden));
        let mut h_prev = Array2::<f64>::zeros((1, hidden));
        let mut c_prev = Array2::<f64>::zeros((1, hidden));
        for step in 0..t_len {
            let t = if reverse { t_len - 1 - step } else { step };
            let a = &pre.slice(s![t..t + 1, ..]) + &h_prev.dot(w_hh);
            for j in 0..hidden {
                let i_g = sigmoid(a[[0, j]]);
                let f_g = sigmoid(a[[0, hidden + j]]);
                let g_g = a[[0, 2 * hidden + j]].tanh();
                let o_g = sigmoid(a[[0, 3 * hidden + j]]);
                let c = f_g * c_prev[[0, j]] + i_g * g_g;
                let h = o_g * c.tanh();
                gates[[t, j]] = i_g;
                gates[[t, hidden + j]] = f_g;
                gates[[t, 2 * hidden + j]] = g_g;
                gates[[t, 3 * hidden + j]] = o_g;
                cells[[t, j]] = c;
                out[[t, j]] = h;
                c_prev[[0, j]] = c;
                h_prev[[0, j]] = h;
            }
        }
        self.push_aux(Op::Lstm { input, recurrent, reverse }, out, vec![gates, cells])
    }

    /// Forward value `value`, backward identity onto `z`.
    pub fn straight_through(&mut self, z: Var, value: Mat) -> Var {
        assert_eq!(self.value(z).dim(), value.dim(), "straight_through: shape mismatch");
        self.push(Op::StraightThrough(z), value)
    }

    /// Mean absolute difference of two equally shaped nodes.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let d = self.abs(d);
        self.mean_all(d)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward: root must be scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(scalar(1.0));
        let mut params = Vec::new();
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            if let Op::Param(id) = node.op {
                params.push((id, Var(idx)));
            }
            grads[idx] = Some(g);
        }
        Gradients { by_node: grads, params }
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let mut acc = |var: Var, delta: Mat| match &mut grads[var.0] {
            Some(existing) => *existing += &delta,
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                acc(*a, g.dot(&self.value(*b).t()));
                acc(*b, self.value(*a).t().dot(g));
            }
            Op::MatMulNT(a, b) => {
                acc(*a, g.dot(self.value(*b)));
                acc(*b, g.t().dot(self.value(*a)));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                acc(*a, g * self.value(*b));
                acc(*b, g * self.value(*a));
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::MulRow(a, row) => {
                acc(*a, g * self.value(*row));
                let prod = g * self.value(*a);
                acc(*row, prod.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Scale(a, c) => acc(*a, g * *c),
            Op::Relu(a) => {
                let x = self.value(*a);
                let mut d = g.clone();
                d.zip_mut_with(x, |d, &x| {
                    if x <= 0.0 {
                        *d = 0.0
                    }
                });
                acc(*a, d);
            }
            Op::Gelu(a) => {
                let mut d = g.clone();
                d.zip_mut_with(self.value(*a), |d, &x| *d *= gelu_grad(x));
                acc(*a, d);
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                d.zip_mut_with(&node.value, |d, &y| *d *= 1.0 - y * y);
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                d.zip_mut_with(&node.value, |d, &y| *d *= y * (1.0 - y));
                acc(*a, d);
            }
            Op::Abs(a) => {
                let mut d = g.clone();
                d.zip_mut_with(self.value(*a), |d, &x| *d *= sign(x));
                acc(*a, d);
            }
            Op::Square(a) => {
                let mut d = g.clone();
                d.zip_mut_with(self.value(*a), |d, &x| *d *= 2.0 * x);
                acc(*a, d);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = g * y;
                let dot = d.sum_axis(Axis(1)).insert_axis(Axis(1));
                d -= &(y * &dot);
                acc(*a, d);
            }
            Op::LogSoftmaxRows(a) => {
                let p = node.value.mapv(f64::exp);
                let total = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                acc(*a, g - &(p * &total));
            }
            Op::LayerNormRows(a) => {
                let y = &node.value;
                let inv_std = &node.aux[0];
                let cols = y.ncols() as f64;
                let mean_g = g.sum_axis(Axis(1)).insert_axis(Axis(1)) / cols;
                let mean_gy = (g * y).sum_axis(Axis(1)).insert_axis(Axis(1)) / cols;
                let d = (g - &mean_g - &(y * &mean_gy)) * inv_std;
                acc(*a, d);
            }
            Op::SliceCols(a, start, len) => {
                let x = self.value(*a);
                let mut d = Array2::zeros(x.dim());
                d.slice_mut(s![.., *start..*start + *len]).assign(g);
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    acc(p, g.slice(s![.., offset..offset + w]).to_owned());
                    offset += w;
                }
            }
            Op::GatherRows(a, rows) => {
                let x = self.value(*a);
                let mut d = Array2::zeros(x.dim());
                for (i, src) in rows.iter().enumerate() {
                    if let Some(src) = *src {
                        let mut target = d.row_mut(src);
                        target += &g.row(i);
                    }
                }
                acc(*a, d);
            }
            Op::MeanRows(a) => {
                let x = self.value(*a);
                let n = x.nrows() as f64;
                let row = g / n;
                acc(*a, Array2::from_shape_fn(x.dim(), |(_, j)| row[[0, j]]));
            }
            Op::SumAll(a) => {
                let dim = self.value(*a).dim();
                acc(*a, Array2::from_elem(dim, g[[0, 0]]));
            }
            Op::MeanAll(a) => {
                let x = self.value(*a);
                acc(*a, Array2::from_elem(x.dim(), g[[0, 0]] / x.len() as f64));
            }
            Op::Unfold { input, kernel, pad } => {
                let x = self.value(*input);
                let (t_len, d) = x.dim();
                let mut dx = Array2::zeros((t_len, d));
                for t in 0..g.nrows() {
                    for k in 0..*kernel {
                        let src = t + k;
                        if src < *pad || src - *pad >= t_len {
                            continue;
                        }
                        let mut target = dx.row_mut(src - *pad);
                        target += &g.slice(s![t, k * d..(k + 1) * d]);
                    }
                }
                acc(*input, dx);
            }
            Op::Lstm { input, recurrent, reverse } => {
                let (d_pre, d_w) = self.lstm_backward(node, *recurrent, *reverse, g);
                acc(*input, d_pre);
                acc(*recurrent, d_w);
            }
            Op::StraightThrough(z) => acc(*z, g.clone()),
        }
    }

    fn lstm_backward(&self, node: &Node, recurrent: Var, reverse: bool, g: &Mat) -> (Mat, Mat) {
        let w_hh = self.value(recurrent);
        let gates = &node.aux[0];
        let cells = &node.aux[1];
        let out = &node.value;
        let (t_len, hidden) = out.dim();
        let mut d_pre = Array2::zeros((t_len, 4 * hidden));
        let mut d_w = Array2::zeros(w_hh.dim());
        let mut dh_next = Array2::<f64>::zeros((1, hidden));
        let mut dc_next = vec![0.0; hidden];
        for step in (0..t_len).rev() {
            let t = if reverse { t_len - 1 - step } else { step };
            let prev = if step == 0 {
                None
            } else if reverse {
                Some(t + 1)
            } else {
                Some(t - 1)
            };
            let mut da = Array2::zeros((1, 4 * hidden));
            for j in 0..hidden {
                let i_g = gates[[t, j]];
                let f_g = gates[[t, hidden + j]];
                let g_g = gates[[t, 2 * hidden + j]];
                let o_g = gates[[t, 3 * hidden + j]];
                let c = cells[[t, j]];
                let c_prev = prev.map_or(0.0, |p| cells[[p, j]]);
                let tc = c.tanh();
                let dh = g[[t, j]] + dh_next[[0, j]];
                let d_o = dh * tc;
                let dc = dc_next[j] + dh * o_g * (1.0 - tc * tc);
                da[[0, j]] = dc * g_g * i_g * (1.0 - i_g);
                da[[0, hidden + j]] = dc * c_prev * f_g * (1.0 - f_g);
                da[[0, 2 * hidden + j]] = dc * i_g * (1.0 - g_g * g_g);
                da[[0, 3 * hidden + j]] = d_o * o_g * (1.0 - o_g);
                dc_next[j] = dc * f_g;
            }
            if let Some(p) = prev {
                let h_prev = out.slice(s![p..p + 1, ..]);
                d_w += &h_prev.t().dot(&da);
            }
            dh_next = da.dot(&w_hh.t());
            d_pre.slice_mut(s![t..t + 1, ..]).assign(&da);
        }
        (d_pre, d_w)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
