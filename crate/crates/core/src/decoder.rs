//! Autoregressive transformer decoder with cross-attention over encoder
//! frames, and the token-level negative log-likelihood.

use aacap_autodiff::{Mat, ParamId, ParamStore, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::PAD;
use crate::error::{Error, Result};
use crate::nn::{causal_mask, normal, Graph, LayerNorm, Linear, MultiHeadAttention};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    /// Maximum decoder input length, BOS included.
    pub max_len: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            model_dim: 128,
            heads: 4,
            ffn_dim: 512,
            vocab_size: 1000,
            max_len: 32,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("decoder: {m}")));
        if self.layers < 1 {
            return bad("layers must be >= 1");
        }
        if self.max_len < 2 {
            return bad("max_len must be >= 2");
        }
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return bad("model_dim must be divisible by heads");
        }
        if self.vocab_size < 4 {
            return bad("vocab_size must cover the reserved tokens");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_norm: LayerNorm,
    self_attn: MultiHeadAttention,
    cross_norm: LayerNorm,
    cross_attn: MultiHeadAttention,
    ffn_norm: LayerNorm,
    ffn_up: Linear,
    ffn_down: Linear,
}

impl DecoderLayer {
    fn new(store: &mut ParamStore, name: &str, cfg: &DecoderConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.model_dim;
        Self {
            self_norm: LayerNorm::new(store, &format!("{name}.self_norm"), d),
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d, cfg.heads, None, rng),
            cross_norm: LayerNorm::new(store, &format!("{name}.cross_norm"), d),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), d, cfg.heads, None, rng),
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), d),
            ffn_up: Linear::new(store, &format!("{name}.ffn_up"), d, cfg.ffn_dim, rng),
            ffn_down: Linear::new(store, &format!("{name}.ffn_down"), cfg.ffn_dim, d, rng),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var, memory: Var, mask: Var) -> Var {
        let h = self.self_norm.forward(g, x);
        let a = self.self_attn.forward(g, h, h, Some(mask));
        let x = g.tape.add(x, a);

        let h = self.cross_norm.forward(g, x);
        let c = self.cross_attn.forward(g, h, memory, None);
        let x = g.tape.add(x, c);

        let h = self.ffn_norm.forward(g, x);
        let h = self.ffn_up.forward(g, h);
        let h = g.tape.gelu(h);
        let f = self.ffn_down.forward(g, h);
        g.tape.add(x, f)
    }
}

/// Pre-norm decoder; the output projection is tied to the token embedding.
#[derive(Debug, Clone)]
pub struct CaptionDecoder {
    pub config: DecoderConfig,
    token_embedding: ParamId,
    position_embedding: ParamId,
    layers: Vec<DecoderLayer>,
    final_norm: LayerNorm,
    output_bias: ParamId,
}

impl CaptionDecoder {
    pub fn new(store: &mut ParamStore, config: DecoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let token_embedding = store.add("decoder.token_embedding", normal(config.vocab_size, d, 0.1, rng), true);
        let position_embedding = store.add("decoder.position_embedding", normal(config.max_len, d, 0.1, rng), true);
        let layers = (0..config.layers)
            .map(|i| DecoderLayer::new(store, &format!("decoder.layer.{i}"), &config, rng))
            .collect();
        let final_norm = LayerNorm::new(store, "decoder.final_norm", d);
        let output_bias = store.add("decoder.output_bias", Mat::zeros((1, config.vocab_size)), true);
        Ok(Self {
            config,
            token_embedding,
            position_embedding,
            layers,
            final_norm,
            output_bias,
        })
    }

    /// Logits (`N × V`) for every prefix position; row `n` depends only on
    /// `tokens[..=n]` and the memory.
    pub fn forward(&self, g: &mut Graph, memory: Var, tokens: &[u32]) -> Result<Var> {
        let n = tokens.len();
        if n == 0 {
            return Err(Error::invalid("decoder input is empty"));
        }
        if n > self.config.max_len {
            return Err(Error::invalid(format!(
                "decoder input of {n} tokens exceeds max_len {}",
                self.config.max_len
            )));
        }
        if let Some(bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::invalid(format!("token id {bad} out of vocabulary")));
        }
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let table = g.p(self.token_embedding);
        let positions = g.p(self.position_embedding);
        let tok = g.tape.gather_rows(table, &ids);
        let pos = g.tape.slice_rows(positions, 0, n);
        let mut x = g.tape.add(tok, pos);
        let mask = g.constant(causal_mask(n));
        for layer in &self.layers {
            x = layer.forward(g, x, memory, mask);
        }
        let x = self.final_norm.forward(g, x);
        let logits = g.tape.matmul_nt(x, table);
        let bias = g.p(self.output_bias);
        Ok(g.tape.add_row(logits, bias))
    }

    /// Forward pass outside of training: returns the logits matrix.
    pub fn logits(&self, store: &ParamStore, memory: &Mat, tokens: &[u32]) -> Result<Mat> {
        let mut g = Graph::new(store);
        let m = g.constant(memory.clone());
        let out = self.forward(&mut g, m, tokens)?;
        Ok(g.value(out).clone())
    }
}

/// `Σ_n −log softmax(logits_n)[target_n]` over non-PAD targets, on the tape.
pub fn nll_on_tape(g: &mut Graph, logits: Var, targets: &[u32]) -> Result<Var> {
    let (rows, vocab) = g.value(logits).dim();
    if rows != targets.len() {
        return Err(Error::invalid(format!(
            "{rows} logit rows for {} targets",
            targets.len()
        )));
    }
    if let Some(bad) = targets.iter().find(|&&t| t as usize >= vocab) {
        return Err(Error::invalid(format!("target id {bad} >= vocabulary size {vocab}")));
    }
    let keep: Vec<usize> = (0..rows).filter(|&i| targets[i] != PAD).collect();
    if keep.is_empty() {
        return Err(Error::invalid("every target position is PAD"));
    }
    let logp = g.tape.log_softmax_rows(logits);
    let cols: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
    let picked = g.tape.pick(logp, &cols);
    let total = if keep.len() == rows {
        g.tape.sum_all(picked)
    } else {
        let mask = Mat::from_shape_fn((rows, 1), |(i, _)| if targets[i] == PAD { 0.0 } else { 1.0 });
        let mask = g.constant(mask);
        let masked = g.tape.mul(picked, mask);
        g.tape.sum_all(masked)
    };
    Ok(g.tape.scale(total, -1.0))
}

/// Negative log-likelihood of `targets` under a logits matrix (PAD masked).
pub fn nll_loss(logits: &Mat, targets: &[u32]) -> Result<f64> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let l = g.constant(logits.clone());
    let loss = nll_on_tape(&mut g, l, targets)?;
    Ok(g.tape.scalar(loss))
}

/// Mean of per-sequence NLL sums over a batch.
pub fn batch_nll_loss(batch: &[(Mat, Vec<u32>)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut total = 0.0;
    for (logits, targets) in batch {
        total += nll_loss(logits, targets)?;
    }
    Ok(total / batch.len() as f64)
}
