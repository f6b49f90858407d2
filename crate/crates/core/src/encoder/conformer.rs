use aacap_autodiff::{Mat, ParamId, ParamStore, Var};
use rand::Rng;

use crate::nn::{xavier, Graph, LayerNorm, Linear, MultiHeadAttention};

/// Pre-norm feed-forward: LayerNorm, expand, Swish, project back.
#[derive(Debug, Clone)]
pub struct FeedForward {
    norm: LayerNorm,
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.norm.forward(g, x);
        let h = self.up.forward(g, h);
        let h = g.tape.silu(h);
        self.down.forward(g, h)
    }
}

/// Pointwise conv with GLU, depthwise time conv, norm, Swish, pointwise conv.
#[derive(Debug, Clone)]
pub struct ConvModule {
    norm: LayerNorm,
    pointwise_in: Linear,
    depthwise: ParamId,
    depthwise_bias: ParamId,
    depthwise_norm: LayerNorm,
    pointwise_out: Linear,
}

impl ConvModule {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        assert!(kernel % 2 == 1, "depthwise kernel must be odd");
        Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
            pointwise_in: Linear::new(store, &format!("{name}.pw_in"), dim, 2 * dim, rng),
            depthwise: store.add(format!("{name}.dw.weight"), xavier(kernel, dim, rng), true),
            depthwise_bias: store.add(format!("{name}.dw.bias"), Mat::zeros((1, dim)), true),
            depthwise_norm: LayerNorm::new(store, &format!("{name}.dw_norm"), dim),
            pointwise_out: Linear::new(store, &format!("{name}.pw_out"), dim, dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.norm.forward(g, x);
        let h = self.pointwise_in.forward(g, h);
        let h = g.tape.glu(h);
        let w = g.p(self.depthwise);
        let b = g.p(self.depthwise_bias);
        let h = g.tape.depthwise_conv_time(h, w);
        let h = g.tape.add_row(h, b);
        let h = self.depthwise_norm.forward(g, h);
        let h = g.tape.silu(h);
        self.pointwise_out.forward(g, h)
    }
}

/// Macaron block: ½FFN, self-attention with relative-position bias, conv
/// module, ½FFN, each residual, then a final LayerNorm.
#[derive(Debug, Clone)]
pub struct ConformerBlock {
    ffn1: FeedForward,
    attn_norm: LayerNorm,
    attn: MultiHeadAttention,
    conv: ConvModule,
    ffn2: FeedForward,
    final_norm: LayerNorm,
}

impl ConformerBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        kernel: usize,
        max_rel: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            ffn1: FeedForward::new(store, &format!("{name}.ffn1"), dim, ffn_dim, rng),
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), dim),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, Some(max_rel), rng),
            conv: ConvModule::new(store, &format!("{name}.conv"), dim, kernel, rng),
            ffn2: FeedForward::new(store, &format!("{name}.ffn2"), dim, ffn_dim, rng),
            final_norm: LayerNorm::new(store, &format!("{name}.final_norm"), dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let f = self.ffn1.forward(g, x);
        let f = g.tape.scale(f, 0.5);
        let x = g.tape.add(x, f);

        let h = self.attn_norm.forward(g, x);
        let a = self.attn.forward(g, h, h, None);
        let x = g.tape.add(x, a);

        let c = self.conv.forward(g, x);
        let x = g.tape.add(x, c);

        let f = self.ffn2.forward(g, x);
        let f = g.tape.scale(f, 0.5);
        let x = g.tape.add(x, f);

        self.final_norm.forward(g, x)
    }
}
