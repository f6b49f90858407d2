//! Audio encoder stack: frozen extractor, strided downsampler, input
//! projection, Conformer layers and the pooled audio embedding.

mod conformer;
pub mod features;

pub use conformer::{ConformerBlock, ConvModule, FeedForward};
pub use features::{FeatureSequence, FrozenExtractor, LogMel, MelConfig};

use aacap_autodiff::{Mat, ParamId, ParamStore, Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Waveform;
use crate::error::{Error, Result};
use crate::nn::{xavier, Graph, Linear};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    ToyLogmelConv,
    ExternalPrecomputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub extractor_kind: ExtractorKind,
    pub mel: MelConfig,
    /// Output width of the frozen extractor (or of precomputed features).
    pub extractor_dim: usize,
    pub downsample_rate: usize,
    pub conformer_layers: usize,
    pub model_dim: usize,
    pub conv_kernel: usize,
    pub attention_heads: usize,
    pub ffn_dim: usize,
    pub max_relative_position: usize,
    /// Width of the pooled audio embedding; must equal the text-embedding width.
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            extractor_kind: ExtractorKind::ToyLogmelConv,
            mel: MelConfig::default(),
            extractor_dim: 64,
            downsample_rate: 3,
            conformer_layers: 2,
            model_dim: 128,
            conv_kernel: 15,
            attention_heads: 4,
            ffn_dim: 512,
            max_relative_position: 32,
            embed_dim: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("encoder: {m}")));
        if self.downsample_rate < 1 {
            return bad("downsample_rate must be >= 1");
        }
        if self.conformer_layers < 1 {
            return bad("conformer_layers must be >= 1");
        }
        if self.attention_heads == 0 || self.model_dim % self.attention_heads != 0 {
            return bad("model_dim must be divisible by attention_heads");
        }
        if self.conv_kernel % 2 == 0 {
            return bad("conv_kernel must be odd");
        }
        if self.extractor_dim == 0 || self.embed_dim == 0 || self.ffn_dim == 0 {
            return bad("dimensions must be positive");
        }
        Ok(())
    }
}

/// Frame features for one waveform: the frozen toy extractor, or a
/// precomputed feature file in `external_precomputed` mode.
pub fn extract_features(
    waveform: &Waveform,
    config: &EncoderConfig,
    extractor: &FrozenExtractor,
    precomputed: Option<&std::path::Path>,
) -> Result<FeatureSequence> {
    let features = match config.extractor_kind {
        ExtractorKind::ToyLogmelConv => extractor.extract(waveform)?,
        ExtractorKind::ExternalPrecomputed => {
            let path = precomputed.ok_or_else(|| {
                Error::Config("external_precomputed extractor needs a feature file".into())
            })?;
            FeatureSequence::load(path)?
        }
    };
    if features.dim() != config.extractor_dim {
        return Err(Error::invalid(format!(
            "features have width {}, encoder expects {}",
            features.dim(),
            config.extractor_dim
        )));
    }
    Ok(features)
}

/// Single strided convolution over time: kernel `2·rate + 1`, stride `rate`,
/// padding `rate`, so the output has `ceil(T / rate)` frames.
#[derive(Debug, Clone)]
pub struct Downsampler {
    pub weight: ParamId,
    pub bias: ParamId,
    pub rate: usize,
}

impl Downsampler {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rate: usize, rng: &mut impl Rng) -> Self {
        let kernel = 2 * rate + 1;
        Self {
            weight: store.add(format!("{name}.weight"), xavier(kernel * dim, dim, rng), true),
            bias: store.add(format!("{name}.bias"), Mat::zeros((1, dim)), true),
            rate,
        }
    }

    pub fn output_len(len: usize, rate: usize) -> usize {
        len.div_ceil(rate)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let r = self.rate;
        let cols = g.tape.unfold_time(x, 2 * r + 1, r, r);
        let w = g.p(self.weight);
        let b = g.p(self.bias);
        let y = g.tape.matmul(cols, w);
        g.tape.add_row(y, b)
    }

    pub fn apply(&self, store: &ParamStore, features: &FeatureSequence) -> Result<FeatureSequence> {
        let mut g = Graph::new(store);
        let x = g.constant(features.frames().clone());
        let y = self.forward(&mut g, x);
        FeatureSequence::new(g.value(y).clone(), features.frame_rate() / self.rate as f64)
    }
}

/// Pooled audio embedding `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioEmbedding {
    pub vector: Vec<f64>,
}

impl AudioEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Mean over time followed by an affine projection (`weight` is `D × D_e`).
pub fn pool_audio_embedding(contextual: &FeatureSequence, weight: &Mat, bias: &Mat) -> Result<AudioEmbedding> {
    if weight.nrows() != contextual.dim() || bias.dim() != (1, weight.ncols()) {
        return Err(Error::invalid("projection shape does not match the feature width"));
    }
    let mut t = Tape::new();
    let x = t.constant(contextual.frames().clone());
    let w = t.constant(weight.clone());
    let b = t.constant(bias.clone());
    let pooled = t.mean_rows(x);
    let y = t.matmul(pooled, w);
    let y = t.add_row(y, b);
    Ok(AudioEmbedding {
        vector: t.value(y).row(0).to_vec(),
    })
}

/// Trainable part of the encoder.
#[derive(Debug, Clone)]
pub struct AudioEncoder {
    pub config: EncoderConfig,
    pub downsampler: Downsampler,
    pub input_proj: Linear,
    pub blocks: Vec<ConformerBlock>,
    pub audio_proj: Linear,
}

/// Outputs of one encoder pass on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EncodedAudio {
    /// Contextual frames (`T' × model_dim`) for decoder cross-attention.
    pub memory: Var,
    /// Pooled and projected embedding (`1 × embed_dim`).
    pub embedding: Var,
}

impl AudioEncoder {
    pub fn new(store: &mut ParamStore, config: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let downsampler = Downsampler::new(store, "encoder.downsample", c.extractor_dim, c.downsample_rate, rng);
        let input_proj = Linear::new(store, "encoder.input_proj", c.extractor_dim, c.model_dim, rng);
        let blocks = (0..c.conformer_layers)
            .map(|i| {
                ConformerBlock::new(
                    store,
                    &format!("encoder.conformer.{i}"),
                    c.model_dim,
                    c.attention_heads,
                    c.ffn_dim,
                    c.conv_kernel,
                    c.max_relative_position,
                    rng,
                )
            })
            .collect();
        let audio_proj = Linear::new(store, "encoder.audio_proj", c.model_dim, c.embed_dim, rng);
        Ok(Self {
            config,
            downsampler,
            input_proj,
            blocks,
            audio_proj,
        })
    }

    /// Downsample, project and contextualize extractor frames.
    pub fn contextualize(&self, g: &mut Graph, frames: Var) -> Var {
        let x = self.downsampler.forward(g, frames);
        let mut x = self.input_proj.forward(g, x);
        for block in &self.blocks {
            x = block.forward(g, x);
        }
        x
    }

    pub fn pool(&self, g: &mut Graph, memory: Var) -> Var {
        let pooled = g.tape.mean_rows(memory);
        self.audio_proj.forward(g, pooled)
    }

    pub fn encode(&self, g: &mut Graph, frames: Var) -> EncodedAudio {
        let memory = self.contextualize(g, frames);
        let embedding = self.pool(g, memory);
        EncodedAudio { memory, embedding }
    }

    /// Conformer stack alone on already-projected `T × model_dim` features.
    pub fn conformer_forward(&self, store: &ParamStore, features: &FeatureSequence) -> Result<FeatureSequence> {
        if features.dim() != self.config.model_dim {
            return Err(Error::invalid(format!(
                "conformer expects width {}, got {}",
                self.config.model_dim,
                features.dim()
            )));
        }
        let mut g = Graph::new(store);
        let mut x = g.constant(features.frames().clone());
        for block in &self.blocks {
            x = block.forward(&mut g, x);
        }
        FeatureSequence::new(g.value(x).clone(), features.frame_rate())
    }

    /// Full trainable stack on extractor features; returns contextual frames and the embedding.
    pub fn run(&self, store: &ParamStore, features: &FeatureSequence) -> Result<(FeatureSequence, AudioEmbedding)> {
        if features.dim() != self.config.extractor_dim {
            return Err(Error::invalid("feature width does not match extractor_dim"));
        }
        let mut g = Graph::new(store);
        let x = g.constant(features.frames().clone());
        let out = self.encode(&mut g, x);
        let rate = features.frame_rate() / self.config.downsample_rate as f64;
        let memory = FeatureSequence::new(g.value(out.memory).clone(), rate)?;
        let embedding = AudioEmbedding {
            vector: g.value(out.embedding).row(0).to_vec(),
        };
        Ok((memory, embedding))
    }
}
