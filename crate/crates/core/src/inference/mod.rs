//! Caption generation, candidate scoring and hybrid reranking.

mod search;

pub use search::{beam_search_tokens, draw, greedy_tokens, nucleus_filter, sample_tokens, scored_len};

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CaptionText, TokenSequence, Tokenizer};
use crate::encoder::AudioEmbedding;
use crate::error::{Error, Result};
use crate::fluency::FluencyDetector;
use crate::model::{Captioner, EncodedAudio};
use crate::objectives::cosine_similarity;
use crate::rng;
use crate::text_embed::TextEmbedder;

/// A decoder conditioned on one clip, seen as a next-token distribution.
pub trait StepModel: Sync {
    fn vocab_size(&self) -> usize;

    /// Maximum decoder input length, BOS included.
    fn max_len(&self) -> usize;

    /// Log-probabilities over the vocabulary for the token after `prefix`
    /// (which starts with BOS).
    fn next_log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>>;

    /// `Σ log p(token | prefix)` over every predicted token of `tokens`.
    fn sequence_log_prob(&self, tokens: &TokenSequence) -> Result<f64> {
        let ids = tokens.ids();
        let mut total = 0.0;
        for n in 1..ids.len() {
            total += self.next_log_probs(&ids[..n])?[ids[n] as usize];
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub num_candidates: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            top_p: 0.95,
            num_candidates: 50,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config("top_p must be in (0, 1]".into()));
        }
        if self.num_candidates == 0 {
            return Err(Error::Config("num_candidates must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankWeights {
    pub w_dec: f64,
    pub w_enc: f64,
}

impl Default for RerankWeights {
    fn default() -> Self {
        Self { w_dec: 0.3, w_enc: 0.7 }
    }
}

impl RerankWeights {
    pub fn new(w_dec: f64, w_enc: f64) -> Result<Self> {
        let w = Self { w_dec, w_enc };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_dec >= 0.0 && self.w_enc >= 0.0) || !(self.w_dec + self.w_enc > 0.0) {
            return Err(Error::Config("rerank weights must be nonnegative with a positive sum".into()));
        }
        Ok(())
    }

    pub fn hybrid(&self, decoder_loglik: f64, encoder_sim: f64) -> f64 {
        self.w_dec * decoder_loglik + self.w_enc * encoder_sim
    }
}

/// How a candidate's log-likelihood enters the hybrid score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoglikNormalization {
    /// Divided by the number of predicted tokens (content plus EOS).
    #[default]
    PerToken,
    Raw,
}

impl LoglikNormalization {
    pub fn apply(self, raw: f64, tokens: &TokenSequence) -> f64 {
        match self {
            LoglikNormalization::PerToken => raw / scored_len(tokens) as f64,
            LoglikNormalization::Raw => raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub caption: CaptionText,
    #[serde(with = "token_ids")]
    pub tokens: TokenSequence,
    /// `Σ log p` over the predicted tokens.
    pub raw_loglik: f64,
    /// `raw_loglik` after the configured normalization; used for reranking.
    pub decoder_loglik: f64,
    pub encoder_sim: f64,
    pub fluent: bool,
    pub hybrid_score: Option<f64>,
}

mod token_ids {
    use super::TokenSequence;
    use serde::{Serialize, Serializer};

    pub fn serialize<S: Serializer>(t: &TokenSequence, s: S) -> Result<S::Ok, S::Error> {
        t.ids().serialize(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    #[default]
    Sample,
    Beam,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub sampling: SamplingConfig,
    pub beam_size: usize,
    pub weights: RerankWeights,
    pub normalization: LoglikNormalization,
    /// Drop disfluent candidates before reranking.
    pub fluency_filter: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            mode: DecodeMode::Sample,
            sampling: SamplingConfig::default(),
            beam_size: 4,
            weights: RerankWeights::default(),
            normalization: LoglikNormalization::PerToken,
            fluency_filter: true,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampling.validate()?;
        self.weights.validate()?;
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-token (or raw, per `normalization`) log-likelihood of a caption.
pub fn decoder_score(model: &dyn StepModel, tokens: &TokenSequence, normalization: LoglikNormalization) -> Result<f64> {
    Ok(normalization.apply(model.sequence_log_prob(tokens)?, tokens))
}

/// Tokenizes `caption` and scores it with [`decoder_score`].
pub fn decoder_score_caption(
    model: &dyn StepModel,
    tokenizer: &Tokenizer,
    caption: &str,
    normalization: LoglikNormalization,
) -> Result<f64> {
    let tokens = tokenizer.tokenize_str(caption)?;
    decoder_score(model, &tokens, normalization)
}

/// Cosine similarity between the pooled audio embedding and the caption's text embedding.
pub fn encoder_score(audio: &AudioEmbedding, caption: &CaptionText, provider: &dyn TextEmbedder) -> Result<f64> {
    cosine_similarity(&audio.vector, &provider.embed(caption.as_str())?)
}

/// Scoring context for one clip.
pub struct ClipScorer<'a> {
    pub model: &'a dyn StepModel,
    pub tokenizer: &'a Tokenizer,
    pub audio: &'a AudioEmbedding,
    pub embedder: &'a dyn TextEmbedder,
    pub detector: &'a dyn FluencyDetector,
    pub normalization: LoglikNormalization,
}

impl ClipScorer<'_> {
    /// Builds a fully scored candidate (without a hybrid score) from tokens.
    /// The log-likelihood is a fresh teacher-forced pass under the
    /// temperature-free, untruncated model distribution.
    pub fn candidate(&self, tokens: TokenSequence) -> Result<Candidate> {
        let caption = self.tokenizer.detokenize(&tokens)?;
        let raw_loglik = self.model.sequence_log_prob(&tokens)?;
        let decoder_loglik = self.normalization.apply(raw_loglik, &tokens);
        let encoder_sim = encoder_score(self.audio, &caption, self.embedder)?;
        let fluent = self.detector.is_fluent(caption.as_str());
        Ok(Candidate {
            caption,
            tokens,
            raw_loglik,
            decoder_loglik,
            encoder_sim,
            fluent,
            hybrid_score: None,
        })
    }
}

/// Generator for candidate `k` of test item `item`.
pub fn candidate_rng(seed: u64, item: u64, k: u64) -> rng::Rng {
    rng::stream(rng::derive_seed(seed, "sample-item", item), "sample-candidate", k)
}

pub fn sample_caption(scorer: &ClipScorer, config: &SamplingConfig, rng: &mut impl rand::Rng) -> Result<Candidate> {
    config.validate()?;
    let tokens = sample_tokens(scorer.model, config.temperature, config.top_p, rng)?;
    scorer.candidate(tokens)
}

/// `num_candidates` independent samples, drawn in parallel with per-candidate generators.
pub fn sample_candidates(scorer: &ClipScorer, config: &SamplingConfig, item: u64) -> Result<Vec<Candidate>> {
    config.validate()?;
    (0..config.num_candidates as u64)
        .into_par_iter()
        .map(|k| sample_caption(scorer, config, &mut candidate_rng(config.seed, item, k)))
        .collect()
}

pub fn beam_search(scorer: &ClipScorer, beam_size: usize) -> Result<Candidate> {
    scorer.candidate(beam_search_tokens(scorer.model, beam_size)?)
}

pub fn greedy(scorer: &ClipScorer) -> Result<Candidate> {
    scorer.candidate(greedy_tokens(scorer.model)?)
}

/// Collapses exact caption duplicates, keeping the first occurrence.
pub fn dedupe(candidates: Vec<Candidate>) -> Vec<Candidate> {
    let mut seen = std::collections::HashSet::new();
    candidates
        .into_iter()
        .filter(|c| seen.insert(c.caption.as_str().to_owned()))
        .collect()
}

/// Sets `hybrid_score` on every candidate.
pub fn score_candidates(candidates: &mut [Candidate], weights: &RerankWeights) {
    for c in candidates {
        c.hybrid_score = Some(weights.hybrid(c.decoder_loglik, c.encoder_sim));
    }
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    let (ha, hb) = (a.hybrid_score.unwrap_or(f64::NEG_INFINITY), b.hybrid_score.unwrap_or(f64::NEG_INFINITY));
    if ha != hb {
        return ha > hb;
    }
    if a.decoder_loglik != b.decoder_loglik {
        return a.decoder_loglik > b.decoder_loglik;
    }
    a.caption.as_str() < b.caption.as_str()
}

/// Hybrid reranking. Duplicates are collapsed, disfluent candidates
/// dropped (all kept if every one is flagged, or when `filter` is off), and
/// the arg-max of `w_dec·decoder_loglik + w_enc·encoder_sim` returned; ties
/// go to the higher log-likelihood, then the lexicographically smaller caption.
pub fn rerank(candidates: Vec<Candidate>, weights: &RerankWeights, filter: bool) -> Result<Candidate> {
    weights.validate()?;
    if candidates.is_empty() {
        return Err(Error::invalid("cannot rerank an empty candidate set"));
    }
    let mut pool = dedupe(candidates);
    if filter && pool.iter().any(|c| c.fluent) {
        pool.retain(|c| c.fluent);
    }
    score_candidates(&mut pool, weights);
    let mut best = pool.swap_remove(0);
    for c in pool {
        if better(&c, &best) {
            best = c;
        }
    }
    Ok(best)
}

/// Output of decoding one clip.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub chosen: Candidate,
    /// Every scored candidate; a single entry for beam and greedy decoding.
    pub candidates: Vec<Candidate>,
}

/// Runs the configured decoding path on an encoded clip.
pub fn decode_clip(
    model: &Captioner,
    encoded: &EncodedAudio,
    embedder: &dyn TextEmbedder,
    detector: &dyn FluencyDetector,
    config: &DecodeConfig,
    item: u64,
) -> Result<Decoded> {
    config.validate()?;
    let bound = model.bind(&encoded.memory);
    let scorer = ClipScorer {
        model: &bound,
        tokenizer: &model.tokenizer,
        audio: &encoded.embedding,
        embedder,
        detector,
        normalization: config.normalization,
    };
    let mut candidates = match config.mode {
        DecodeMode::Sample => sample_candidates(&scorer, &config.sampling, item)?,
        DecodeMode::Beam => vec![beam_search(&scorer, config.beam_size)?],
        DecodeMode::Greedy => vec![greedy(&scorer)?],
    };
    score_candidates(&mut candidates, &config.weights);
    let chosen = match config.mode {
        DecodeMode::Sample => rerank(candidates.clone(), &config.weights, config.fluency_filter)?,
        _ => candidates[0].clone(),
    };
    Ok(Decoded { chosen, candidates })
}

#[derive(Debug, Serialize)]
struct CandidateRow<'a> {
    item: &'a str,
    chosen: bool,
    #[serde(flatten)]
    candidate: &'a Candidate,
}

/// Appends one JSON line per candidate of an item.
pub fn write_candidate_dump(mut out: impl Write, item: &str, decoded: &Decoded) -> Result<()> {
    for c in &decoded.candidates {
        let row = CandidateRow {
            item,
            chosen: c.caption == decoded.chosen.caption,
            candidate: c,
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
