//! Waveforms, captions, tokenization and dataset loading.

mod dataset;
mod tokenizer;
pub mod wav;

pub use dataset::{
    check_disjoint, load_dataset, AudioCaptionPair, DatasetSplit, LoadOptions, SplitName,
};
pub use tokenizer::{build_vocabulary, words_of, TokenSequence, Tokenizer, BOS, EOS, PAD, SPECIALS, UNK};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder input rate in Hz.
pub const SAMPLE_RATE: u32 = 16_000;

/// Maximum word count for mix-up captions.
pub const MIXUP_WORD_LIMIT: usize = 25;

/// Mono audio with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(bad) = samples.iter().find(|s| !s.is_finite() || s.abs() > 1.0 + 1e-9) {
            return Err(Error::invalid(format!(
                "waveform amplitude {bad} is not a finite value in [-1, 1]"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Root-mean-square amplitude; zero for an empty waveform.
    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }
}

pub(crate) fn rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt()
}

/// Where a caption came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionSource {
    Human,
    Mixup,
    Generated,
}

/// A caption in canonical form: lowercase, punctuation stripped, single spaces.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CaptionText {
    text: String,
    source: CaptionSource,
}

impl CaptionText {
    pub fn new(text: &str, source: CaptionSource) -> Result<Self> {
        let text = normalize_text(text);
        if text.is_empty() {
            return Err(Error::EmptyCaption);
        }
        let words = text.split(' ').count();
        if source == CaptionSource::Mixup && words > MIXUP_WORD_LIMIT {
            return Err(Error::invalid(format!(
                "mix-up caption has {words} words (limit {MIXUP_WORD_LIMIT})"
            )));
        }
        Ok(Self { text, source })
    }

    pub fn human(text: &str) -> Result<Self> {
        Self::new(text, CaptionSource::Human)
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn source(&self) -> CaptionSource {
        self.source
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.text.split(' ')
    }

    pub fn word_count(&self) -> usize {
        self.words().count()
    }
}

/// Serialized as the bare normalized text.
impl serde::Serialize for CaptionText {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.text)
    }
}

impl std::fmt::Display for CaptionText {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.text)
    }
}

/// Lowercases, drops apostrophes, turns other punctuation into spaces and
/// collapses whitespace.
pub fn normalize_text(text: &str) -> String {
    let mut cleaned = String::with_capacity(text.len());
    for ch in text.chars() {
        if ch == '\'' || ch == '\u{2019}' {
            continue;
        }
        if ch.is_alphanumeric() {
            cleaned.extend(ch.to_lowercase());
        } else {
            cleaned.push(' ');
        }
    }
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whitespace-delimited word count of raw text.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}
