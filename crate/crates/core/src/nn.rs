//! Layers shared by the encoder and decoder.

use aacap_autodiff::{Mat, ParamId, ParamStore, Tape, Var};
use ndarray::Array2;
use rand::Rng;

/// A tape bound to the parameter store it reads from.
pub struct Graph<'s> {
    pub tape: Tape,
    pub store: &'s ParamStore,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            store,
        }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.tape.constant(m)
    }

    pub fn value(&self, v: Var) -> &Mat {
        self.tape.value(v)
    }
}

pub fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

pub fn normal(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Mat {
    use rand_distr::{Distribution, Normal};
    let dist = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add(format!("{name}.weight"), xavier(d_in, d_out, rng), true);
        let b = store.add(format!("{name}.bias"), Mat::zeros((1, d_out)), true);
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.p(self.w);
        let b = g.p(self.b);
        let y = g.tape.matmul(x, w);
        g.tape.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Mat::ones((1, dim)), true);
        let beta = store.add(format!("{name}.beta"), Mat::zeros((1, dim)), true);
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gamma = g.p(self.gamma);
        let beta = g.p(self.beta);
        g.tape.layer_norm(x, gamma, beta, LN_EPS)
    }
}

/// Learned per-head bias indexed by clipped relative offset.
#[derive(Debug, Clone)]
pub struct RelativePositionBias {
    pub table: ParamId,
    pub max_rel: usize,
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
    pub rel_bias: Option<RelativePositionBias>,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        max_rel: Option<usize>,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(heads > 0 && dim % heads == 0, "model dim must divide into heads");
        let rel_bias = max_rel.map(|m| RelativePositionBias {
            table: store.add(
                format!("{name}.rel_bias"),
                normal(2 * m + 1, heads, 0.02, rng),
                true,
            ),
            max_rel: m,
        });
        Self {
            query: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            out: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
            rel_bias,
        }
    }

    /// Attends from `queries` (Tq × D) over `keys_values` (Tk × D). `mask` is an
    /// additive Tq × Tk matrix (0 or a large negative value).
    pub fn forward(&self, g: &mut Graph, queries: Var, keys_values: Var, mask: Option<Var>) -> Var {
        let q = self.query.forward(g, queries);
        let k = self.key.forward(g, keys_values);
        let v = self.value.forward(g, keys_values);
        let dim = g.value(q).ncols();
        let tq = g.value(q).nrows();
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let rel_table = self.rel_bias.as_ref().map(|rb| (g.p(rb.table), rb.max_rel));
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.tape.slice_cols(q, h * dh, dh);
            let kh = g.tape.slice_cols(k, h * dh, dh);
            let vh = g.tape.slice_cols(v, h * dh, dh);
            let scores = g.tape.matmul_nt(qh, kh);
            let mut scores = g.tape.scale(scores, scale);
            if let Some((table, max_rel)) = rel_table {
                let bias = g.tape.rel_bias(table, tq, h, max_rel);
                scores = g.tape.add(scores, bias);
            }
            if let Some(m) = mask {
                scores = g.tape.add(scores, m);
            }
            let attn = g.tape.softmax_rows(scores);
            heads.push(g.tape.matmul(attn, vh));
        }
        let merged = g.tape.concat_cols(&heads);
        self.out.forward(g, merged)
    }
}

/// Additive mask hiding future positions.
pub fn causal_mask(len: usize) -> Mat {
    Array2::from_shape_fn((len, len), |(i, j)| if j > i { -1e9 } else { 0.0 })
}
