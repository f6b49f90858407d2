use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};

use crate::params::{ParamId, ParamStore};
use crate::Mat;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Silu(Var),
    Gelu(Var),
    Glu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    SumAll(Var),
    Gather(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    Unfold {
        x: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    DepthwiseConv {
        x: Var,
        w: Var,
        pad: usize,
    },
    RelBias {
        table: Var,
        head: usize,
        max_rel: usize,
    },
    L2NormalizeRows(Var, Vec<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// Records a computation over dense matrices and replays it backwards.
///
/// Every value is a 2-D `f64` matrix; vectors are `1 × n` rows and scalars
/// are `1 × 1`. Shape mismatches are programming errors and panic.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Mat>>,
    bound: Vec<(ParamId, Var)>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for a bound parameter; `None` if it did not influence the output.
    pub fn param(&self, id: ParamId) -> Option<&Mat> {
        self.bound
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.get(*v))
    }

    /// All parameter gradients in parameter-id order.
    pub fn params(&self) -> Vec<(ParamId, &Mat)> {
        let mut out: Vec<_> = self
            .bound
            .iter()
            .filter_map(|(p, v)| self.get(*v).map(|g| (*p, g)))
            .collect();
        out.sort_by_key(|(p, _)| *p);
        out
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

fn row_softmax(a: &Mat) -> Mat {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let max = if max.is_finite() { max } else { 0.0 };
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn row_log_softmax(a: &Mat) -> Mat {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let max = if max.is_finite() { max } else { 0.0 };
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        row.mapv_inplace(|v| v - lse);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar() on a non-scalar node");
        m[[0, 0]]
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// An input that receives a gradient (used for gradient checks on inputs).
    pub fn input(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, true)
    }

    /// Binds a parameter; repeated binds on one tape return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.bound.get(&id) {
            return *v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, store.is_trainable(id));
        self.bound.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMulNT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a 1 x n row");
        let value = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * sigmoid(x));
        let rg = self.rg(a);
        self.push(value, Op::Silu(a), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .mapv(|x| 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()));
        let rg = self.rg(a);
        self.push(value, Op::Gelu(a), rg)
    }

    /// Gated linear unit over the column halves: `left * sigmoid(right)`.
    pub fn glu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let half = x.ncols() / 2;
        assert_eq!(half * 2, x.ncols(), "glu needs an even column count");
        let left = x.slice(s![.., ..half]);
        let right = x.slice(s![.., half..]);
        let value = Zip::from(&left)
            .and(&right)
            .map_collect(|&u, &v| u * sigmoid(v));
        let rg = self.rg(a);
        self.push(value, Op::Glu(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = row_softmax(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let value = row_log_softmax(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::LogSoftmaxRows(a), rg)
    }

    /// Row-wise layer normalization with affine `1 × n` gamma and beta.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std.push(inv);
        }
        let value = &xhat * self.value(gamma) + self.value(beta);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(a);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let rg = self.rg(a);
        self.push(value, Op::SliceRows(a, start), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols shape mismatch");
        let rg = parts.iter().any(|v| self.rg(*v));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows shape mismatch");
        let rg = parts.iter().any(|v| self.rg(*v));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Mean over rows, giving a `1 × n` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean_rows of empty matrix")
            .insert_axis(Axis(0));
        let rg = self.rg(a);
        self.push(value, Op::MeanRows(a), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::SumAll(a), rg)
    }

    /// Selects rows of `table` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let value = self.value(table).select(Axis(0), ids);
        let rg = self.rg(table);
        self.push(value, Op::Gather(table, ids.to_vec()), rg)
    }

    /// Picks `a[n, cols[n]]` for every row, giving an `n × 1` column.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Var {
        let av = self.value(a);
        assert_eq!(av.nrows(), cols.len(), "pick needs one column index per row");
        let value = Array2::from_shape_fn((cols.len(), 1), |(n, _)| av[[n, cols[n]]]);
        let rg = self.rg(a);
        self.push(value, Op::Pick(a, cols.to_vec()), rg)
    }

    /// Time-axis im2col: row `t` holds frames `t*stride - pad .. + kernel`
    /// flattened frame-major, zero outside the input.
    pub fn unfold_time(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let (t_in, d) = xv.dim();
        assert!(t_in + 2 * pad >= kernel, "unfold_time: input shorter than kernel");
        let t_out = (t_in + 2 * pad - kernel) / stride + 1;
        let mut value = Array2::zeros((t_out, kernel * d));
        for t in 0..t_out {
            for j in 0..kernel {
                let src = (t * stride + j) as isize - pad as isize;
                if src >= 0 && (src as usize) < t_in {
                    value
                        .slice_mut(s![t, j * d..(j + 1) * d])
                        .assign(&xv.row(src as usize));
                }
            }
        }
        let rg = self.rg(x);
        self.push(
            value,
            Op::Unfold {
                x,
                kernel,
                stride,
                pad,
            },
            rg,
        )
    }

    /// Per-channel convolution along time with "same" padding; `w` is `k × d`, `k` odd.
    pub fn depthwise_conv_time(&mut self, x: Var, w: Var) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (t_len, d) = xv.dim();
        let k = wv.nrows();
        assert_eq!(wv.ncols(), d, "depthwise kernel width must match channels");
        assert_eq!(k % 2, 1, "depthwise kernel must be odd");
        let pad = (k - 1) / 2;
        let mut value = Array2::zeros((t_len, d));
        for t in 0..t_len {
            for j in 0..k {
                let src = (t + j) as isize - pad as isize;
                if src >= 0 && (src as usize) < t_len {
                    let mut out = value.row_mut(t);
                    out.scaled_add(1.0, &(&xv.row(src as usize) * &wv.row(j)));
                }
            }
        }
        let rg = self.rg(x) || self.rg(w);
        self.push(value, Op::DepthwiseConv { x, w, pad }, rg)
    }

    /// `len × len` bias matrix read from column `head` of a `(2m+1) × heads`
    /// table, indexed by the clipped relative offset `j - i`.
    pub fn rel_bias(&mut self, table: Var, len: usize, head: usize, max_rel: usize) -> Var {
        let tv = self.value(table);
        assert_eq!(tv.nrows(), 2 * max_rel + 1, "relative bias table size");
        let value = Array2::from_shape_fn((len, len), |(i, j)| {
            tv[[rel_index(i, j, max_rel), head]]
        });
        let rg = self.rg(table);
        self.push(
            value,
            Op::RelBias {
                table,
                head,
                max_rel,
            },
            rg,
        )
    }

    /// Scales every row to unit Euclidean norm. Zero rows produce non-finite values;
    /// callers validate norms first.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let norms: Vec<f64> = av
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .collect();
        let mut value = av.clone();
        for (mut row, n) in value.rows_mut().into_iter().zip(&norms) {
            row.mapv_inplace(|v| v / n);
        }
        let rg = self.rg(a);
        self.push(value, Op::L2NormalizeRows(a, norms), rg)
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, out: Var) -> Grads {
        assert_eq!(self.value(out).dim(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Array2::ones((1, 1)));
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        let mut bound: Vec<_> = self.bound.iter().map(|(p, v)| (*p, *v)).collect();
        bound.sort_by_key(|(p, _)| *p);
        Grads { grads, bound }
    }

    fn backprop_node(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let mut acc = |v: Var, delta: Mat| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.dot(&self.value(*b).t()));
                }
                if self.rg(*b) {
                    acc(*b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulNT(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.dot(self.value(*b)));
                }
                if self.rg(*b) {
                    acc(*b, g.t().dot(self.value(*a)));
                }
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
                if self.rg(*a) {
                    acc(*a, g * self.value(*b));
                }
                if self.rg(*b) {
                    acc(*b, g * self.value(*a));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if self.rg(*row) {
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Scale(a, factor) => acc(*a, g * *factor),
            Op::Transpose(a) => acc(*a, g.t().to_owned()),
            Op::Silu(a) => {
                let x = self.value(*a);
                let d = Zip::from(g).and(x).map_collect(|&g, &x| {
                    let s = sigmoid(x);
                    g * s * (1.0 + x * (1.0 - s))
                });
                acc(*a, d);
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                let d = Zip::from(g).and(x).map_collect(|&g, &x| {
                    let inner = GELU_K * (x + GELU_C * x * x * x);
                    let t = inner.tanh();
                    let dinner = GELU_K * (1.0 + 3.0 * GELU_C * x * x);
                    g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)
                });
                acc(*a, d);
            }
            Op::Glu(a) => {
                let x = self.value(*a);
                let half = x.ncols() / 2;
                let mut d = Array2::zeros(x.dim());
                for r in 0..x.nrows() {
                    for c in 0..half {
                        let u = x[[r, c]];
                        let s = sigmoid(x[[r, c + half]]);
                        d[[r, c]] = g[[r, c]] * s;
                        d[[r, c + half]] = g[[r, c]] * u * s * (1.0 - s);
                    }
                }
                acc(*a, d);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = g * y;
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                    let dot = drow.sum();
                    drow.zip_mut_with(&yrow, |dv, &yv| *dv -= yv * dot);
                }
                acc(*a, d);
            }
            Op::LogSoftmaxRows(a) => {
                let y = &node.value;
                let mut d = g.clone();
                for ((mut drow, grow), yrow) in
                    d.rows_mut().into_iter().zip(g.rows()).zip(y.rows())
                {
                    let gsum = grow.sum();
                    drow.zip_mut_with(&yrow, |dv, &yv| *dv -= yv.exp() * gsum);
                }
                acc(*a, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                if self.rg(*gamma) {
                    acc(*gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.rg(*beta) {
                    acc(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.rg(*x) {
                    let gxhat = g * self.value(*gamma);
                    let n = xhat.ncols() as f64;
                    let mut d = Array2::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let gr = gxhat.row(r);
                        let xr = xhat.row(r);
                        let mean_g = gr.sum() / n;
                        let mean_gx = gr.dot(&xr) / n;
                        for c in 0..xhat.ncols() {
                            d[[r, c]] = inv_std[r] * (gr[c] - mean_g - xr[c] * mean_gx);
                        }
                    }
                    acc(*x, d);
                }
            }
            Op::SliceCols(a, start) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                acc(*a, d);
            }
            Op::SliceRows(a, start) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    acc(*p, g.slice(s![.., offset..offset + w]).to_owned());
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let h = self.value(*p).nrows();
                    acc(*p, g.slice(s![offset..offset + h, ..]).to_owned());
                    offset += h;
                }
            }
            Op::MeanRows(a) => {
                let (rows, cols) = self.value(*a).dim();
                let row = g.row(0).to_owned() / rows as f64;
                let d = row.broadcast((rows, cols)).unwrap().to_owned();
                acc(*a, d);
            }
            Op::SumAll(a) => {
                acc(*a, Array2::from_elem(self.value(*a).dim(), g[[0, 0]]));
            }
            Op::Gather(table, ids) => {
                let mut d = Array2::zeros(self.value(*table).dim());
                for (r, &id) in ids.iter().enumerate() {
                    let mut dst = d.row_mut(id);
                    dst += &g.row(r);
                }
                acc(*table, d);
            }
            Op::Pick(a, cols) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                for (r, &c) in cols.iter().enumerate() {
                    d[[r, c]] += g[[r, 0]];
                }
                acc(*a, d);
            }
            Op::Unfold {
                x,
                kernel,
                stride,
                pad,
            } => {
                let (t_in, dim) = self.value(*x).dim();
                let mut d = Array2::zeros((t_in, dim));
                for t in 0..g.nrows() {
                    for j in 0..*kernel {
                        let src = (t * stride + j) as isize - *pad as isize;
                        if src >= 0 && (src as usize) < t_in {
                            let mut dst = d.row_mut(src as usize);
                            dst += &g.slice(s![t, j * dim..(j + 1) * dim]);
                        }
                    }
                }
                acc(*x, d);
            }
            Op::DepthwiseConv { x, w, pad } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (t_len, _) = xv.dim();
                let k = wv.nrows();
                let mut dx = Array2::zeros(xv.dim());
                let mut dw = Array2::zeros(wv.dim());
                for t in 0..t_len {
                    for j in 0..k {
                        let src = (t + j) as isize - *pad as isize;
                        if src >= 0 && (src as usize) < t_len {
                            let src = src as usize;
                            let grow = g.row(t);
                            dx.row_mut(src).scaled_add(1.0, &(&grow * &wv.row(j)));
                            dw.row_mut(j).scaled_add(1.0, &(&grow * &xv.row(src)));
                        }
                    }
                }
                acc(*x, dx);
                acc(*w, dw);
            }
            Op::RelBias {
                table,
                head,
                max_rel,
            } => {
                let mut d = Array2::zeros(self.value(*table).dim());
                for ((i, j), &gv) in g.indexed_iter() {
                    d[[rel_index(i, j, *max_rel), *head]] += gv;
                }
                acc(*table, d);
            }
            Op::L2NormalizeRows(a, norms) => {
                let y = &node.value;
                let mut d = g.clone();
                for (r, n) in norms.iter().enumerate() {
                    let dot = g.row(r).dot(&y.row(r));
                    let yrow = y.row(r);
                    d.row_mut(r)
                        .zip_mut_with(&yrow, |dv, &yv| *dv = (*dv - yv * dot) / n);
                }
                acc(*a, d);
            }
        }
    }
}

fn rel_index(i: usize, j: usize, max_rel: usize) -> usize {
    let offset = (j as isize - i as isize).clamp(-(max_rel as isize), max_rel as isize);
    (offset + max_rel as isize) as usize
}
