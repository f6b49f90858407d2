//! The full captioning model: frozen extractor, trainable encoder stack,
//! decoder and tokenizer.

use aacap_autodiff::{Mat, ParamId, ParamStore};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{TokenSequence, Tokenizer, Waveform, PAD};
use crate::decoder::{nll_on_tape, CaptionDecoder, DecoderConfig};
use crate::encoder::{AudioEmbedding, AudioEncoder, EncoderConfig, FeatureSequence, FrozenExtractor};
use crate::error::{Error, Result};
use crate::inference::StepModel;
use crate::nn::Graph;
use crate::objectives::{infonce_on_tape, ContrastiveConfig};
use crate::text_embed::TextEmbedderConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub text_embedder: TextEmbedderConfig,
    pub extractor_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            text_embedder: TextEmbedderConfig::default(),
            extractor_seed: 0,
        }
    }
}

impl ModelConfig {
    /// A small configuration for tests and examples.
    pub fn tiny() -> Self {
        let mut cfg = Self::default();
        cfg.encoder.extractor_dim = 32;
        cfg.encoder.model_dim = 32;
        cfg.encoder.ffn_dim = 64;
        cfg.encoder.conv_kernel = 7;
        cfg.encoder.attention_heads = 2;
        cfg.encoder.embed_dim = 32;
        cfg.decoder.model_dim = 32;
        cfg.decoder.ffn_dim = 64;
        cfg.decoder.heads = 2;
        cfg.text_embedder = TextEmbedderConfig::HashedBow { dim: 32, seed: 7 };
        cfg
    }
}

/// One teacher-forced training example.
#[derive(Debug, Clone)]
pub struct TrainExample {
    /// Frozen-extractor frames.
    pub features: Mat,
    pub tokens: TokenSequence,
    pub text_embedding: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Batch mean of per-caption summed NLL.
    pub nll: f64,
    pub infonce: f64,
    pub total: f64,
    /// NLL summed over every target token in the batch.
    pub nll_sum: f64,
    pub target_tokens: usize,
}

impl LossBreakdown {
    pub fn per_token_nll(&self) -> f64 {
        self.nll_sum / self.target_tokens.max(1) as f64
    }
}

/// Encoder outputs for inference.
#[derive(Debug, Clone)]
pub struct EncodedAudio {
    pub memory: Mat,
    pub embedding: AudioEmbedding,
}

#[derive(Debug, Clone)]
pub struct Captioner {
    pub config: ModelConfig,
    pub extractor: FrozenExtractor,
    pub params: ParamStore,
    pub encoder: AudioEncoder,
    pub decoder: CaptionDecoder,
    pub tokenizer: Tokenizer,
}

impl Captioner {
    pub fn new(mut config: ModelConfig, tokenizer: Tokenizer, rng: &mut impl Rng) -> Result<Self> {
        config.decoder.vocab_size = tokenizer.vocab_size();
        if config.decoder.model_dim != config.encoder.model_dim {
            return Err(Error::Config("encoder and decoder model_dim must match".into()));
        }
        if config.text_embedder.dim()? != config.encoder.embed_dim {
            return Err(Error::Config(
                "encoder embed_dim must equal the text-embedding width".into(),
            ));
        }
        let extractor = FrozenExtractor::new(
            config.encoder.mel,
            config.encoder.extractor_dim,
            config.extractor_seed,
        );
        let mut params = ParamStore::new();
        let encoder = AudioEncoder::new(&mut params, config.encoder.clone(), rng)?;
        let decoder = CaptionDecoder::new(&mut params, config.decoder.clone(), rng)?;
        Ok(Self {
            config,
            extractor,
            params,
            encoder,
            decoder,
            tokenizer,
        })
    }

    /// Rebuilds a model around stored parameters; used by checkpoint loading.
    pub(crate) fn with_parts(
        config: ModelConfig,
        tokenizer: Tokenizer,
        extractor: FrozenExtractor,
        stored: &ParamStore,
    ) -> Result<Self> {
        // Module construction registers parameters in a fixed order; the
        // throwaway initialization is then overwritten by name.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::new(config, tokenizer, &mut rng)?;
        model.extractor = extractor;
        if stored.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                stored.len(),
                model.params.len()
            )));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.entry(id).name.clone();
            let src = stored
                .find(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            let value = stored.get(src);
            if value.dim() != model.params.get(id).dim() {
                return Err(Error::Checkpoint(format!("tensor `{name}` has the wrong shape")));
            }
            *model.params.get_mut(id) = value.clone();
        }
        Ok(model)
    }

    pub fn features(&self, waveform: &Waveform) -> Result<FeatureSequence> {
        self.extractor.extract(waveform)
    }

    pub fn encode(&self, features: &Mat) -> Result<EncodedAudio> {
        let (memory, embedding) = self
            .encoder
            .run(&self.params, &FeatureSequence::new(features.clone(), self.extractor.frame_rate())?)?;
        Ok(EncodedAudio {
            memory: memory.into_frames(),
            embedding,
        })
    }

    fn check_example(&self, ex: &TrainExample) -> Result<()> {
        if ex.features.ncols() != self.config.encoder.extractor_dim {
            return Err(Error::invalid("example features do not match extractor_dim"));
        }
        if ex.tokens.inputs().len() > self.config.decoder.max_len {
            return Err(Error::invalid(format!(
                "caption of {} tokens exceeds decoder max_len {}",
                ex.tokens.len(),
                self.config.decoder.max_len
            )));
        }
        if ex.text_embedding.len() != self.config.encoder.embed_dim {
            return Err(Error::invalid("text embedding width mismatch"));
        }
        Ok(())
    }

    fn build_loss(&self, g: &mut Graph, batch: &[TrainExample], contrastive: &ContrastiveConfig) -> Result<(aacap_autodiff::Var, LossBreakdown)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut nll_terms = Vec::with_capacity(batch.len());
        let mut embeddings = Vec::with_capacity(batch.len());
        let mut target_tokens = 0;
        for ex in batch {
            self.check_example(ex)?;
            let frames = g.constant(ex.features.clone());
            let enc = self.encoder.encode(g, frames);
            let logits = self.decoder.forward(g, enc.memory, ex.tokens.inputs())?;
            let targets = ex.tokens.targets();
            nll_terms.push(nll_on_tape(g, logits, targets)?);
            target_tokens += targets.iter().filter(|&&t| t != PAD).count();
            embeddings.push(enc.embedding);
        }
        let b = batch.len() as f64;
        let nll_stack = g.tape.concat_rows(&nll_terms);
        let nll_sum = g.tape.sum_all(nll_stack);
        let nll = g.tape.scale(nll_sum, 1.0 / b);

        let audio = g.tape.concat_rows(&embeddings);
        let text = Array2::from_shape_fn((batch.len(), self.config.encoder.embed_dim), |(i, j)| {
            batch[i].text_embedding[j]
        });
        let text = g.constant(text);
        let infonce = infonce_on_tape(&mut g.tape, audio, text, contrastive.temperature);
        let weighted = g.tape.scale(infonce, contrastive.alpha);
        let total = g.tape.add(nll, weighted);
        let breakdown = LossBreakdown {
            nll: g.tape.scalar(nll),
            infonce: g.tape.scalar(infonce),
            total: g.tape.scalar(total),
            nll_sum: g.tape.scalar(nll_sum),
            target_tokens,
        };
        Ok((total, breakdown))
    }

    /// Multitask loss on a batch without gradients.
    pub fn batch_loss(&self, batch: &[TrainExample], contrastive: &ContrastiveConfig) -> Result<LossBreakdown> {
        let mut g = Graph::new(&self.params);
        Ok(self.build_loss(&mut g, batch, contrastive)?.1)
    }

    /// Multitask loss and gradients for every trainable parameter.
    pub fn loss_and_grads(
        &self,
        batch: &[TrainExample],
        contrastive: &ContrastiveConfig,
    ) -> Result<(LossBreakdown, Vec<(ParamId, Mat)>)> {
        let mut g = Graph::new(&self.params);
        let (total, breakdown) = self.build_loss(&mut g, batch, contrastive)?;
        let grads = g.tape.backward(total);
        let grads = grads
            .params()
            .into_iter()
            .map(|(id, m)| (id, m.clone()))
            .collect();
        Ok((breakdown, grads))
    }

    /// Teacher-forced arg-max accuracy over non-PAD targets: `(correct, total)`.
    pub fn next_token_accuracy(&self, examples: &[TrainExample]) -> Result<(usize, usize)> {
        let mut correct = 0;
        let mut total = 0;
        for ex in examples {
            self.check_example(ex)?;
            let enc = self.encode(&ex.features)?;
            let logits = self.decoder.logits(&self.params, &enc.memory, ex.tokens.inputs())?;
            for (row, &target) in logits.rows().into_iter().zip(ex.tokens.targets()) {
                if target == PAD {
                    continue;
                }
                let argmax = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0;
                correct += usize::from(argmax as u32 == target);
                total += 1;
            }
        }
        Ok((correct, total))
    }

    /// Decoder bound to one encoded clip, for decoding and scoring.
    pub fn bind<'a>(&'a self, memory: &'a Mat) -> BoundDecoder<'a> {
        BoundDecoder { model: self, memory }
    }
}

use rand::SeedableRng;

pub struct BoundDecoder<'a> {
    model: &'a Captioner,
    memory: &'a Mat,
}

impl StepModel for BoundDecoder<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config.decoder.vocab_size
    }

    fn max_len(&self) -> usize {
        self.model.config.decoder.max_len
    }

    fn next_log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        let logits = self.model.decoder.logits(&self.model.params, self.memory, prefix)?;
        let last = logits.row(logits.nrows() - 1);
        Ok(log_softmax(last.as_slice().expect("contiguous row")))
    }

    fn sequence_log_prob(&self, tokens: &TokenSequence) -> Result<f64> {
        let logits = self.model.decoder.logits(&self.model.params, self.memory, tokens.inputs())?;
        Ok(-crate::decoder::nll_loss(&logits, tokens.targets())?)
    }
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|v| v - lse).collect()
}
