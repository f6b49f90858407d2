//! CIDEr-D: TF-IDF weighted n-gram consensus between a candidate caption
//! and its references.

use std::collections::{BTreeMap, BTreeSet};

use crate::data::{words_of, CaptionText};

pub const MAX_N: usize = 4;
/// Standard deviation of the Gaussian length penalty, in words.
pub const LENGTH_SIGMA: f64 = 6.0;
pub const CIDER_SCALE: f64 = 10.0;

type Ngram = Vec<String>;
type Counts = BTreeMap<Ngram, f64>;

/// n-gram counts for `n = 1..=MAX_N` of one caption.
pub fn ngram_counts(words: &[String]) -> Counts {
    let mut counts = Counts::new();
    for n in 1..=MAX_N {
        for gram in words.windows(n) {
            *counts.entry(gram.to_vec()).or_insert(0.0) += 1.0;
        }
    }
    counts
}

/// Document frequencies over the reference sets of a corpus: the number of
/// items whose references contain each n-gram.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NgramProfile {
    df: BTreeMap<Ngram, f64>,
    num_items: usize,
}

impl NgramProfile {
    pub fn from_references<R: AsRef<[CaptionText]>>(reference_sets: &[R]) -> Self {
        let mut df = BTreeMap::new();
        for refs in reference_sets {
            let mut seen = BTreeSet::new();
            for r in refs.as_ref() {
                for gram in ngram_counts(&words_of(r.as_str())).into_keys() {
                    seen.insert(gram);
                }
            }
            for gram in seen {
                *df.entry(gram).or_insert(0.0) += 1.0;
            }
        }
        Self {
            df,
            num_items: reference_sets.len(),
        }
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn document_frequency(&self, gram: &[String]) -> f64 {
        self.df.get(gram).copied().unwrap_or(0.0)
    }
}

struct TfIdf {
    vecs: [BTreeMap<Ngram, f64>; MAX_N],
    norms: [f64; MAX_N],
    /// Length used by the penalty: the number of bigrams.
    length: f64,
}

fn tfidf(words: &[String], profile: &NgramProfile) -> TfIdf {
    let log_n = (profile.num_items.max(1) as f64).ln();
    let mut vecs: [BTreeMap<Ngram, f64>; MAX_N] = Default::default();
    let mut norms = [0.0; MAX_N];
    let mut length = 0.0;
    for (gram, tf) in ngram_counts(words) {
        let n = gram.len() - 1;
        let df = profile.document_frequency(&gram).max(1.0);
        let w = tf * (log_n - df.ln());
        norms[n] += w * w;
        if n == 1 {
            length += tf;
        }
        vecs[n].insert(gram, w);
    }
    TfIdf {
        vecs,
        norms: norms.map(f64::sqrt),
        length,
    }
}

fn similarity(cand: &TfIdf, reference: &TfIdf) -> [f64; MAX_N] {
    let delta = cand.length - reference.length;
    let penalty = (-(delta * delta) / (2.0 * LENGTH_SIGMA * LENGTH_SIGMA)).exp();
    let mut out = [0.0; MAX_N];
    for n in 0..MAX_N {
        let mut dot = 0.0;
        for (gram, &w) in &cand.vecs[n] {
            if let Some(&r) = reference.vecs[n].get(gram) {
                // Clipping the candidate weight keeps repeated n-grams from
                // inflating the score.
                dot += w.min(r) * r;
            }
        }
        if cand.norms[n] != 0.0 && reference.norms[n] != 0.0 {
            dot /= cand.norms[n] * reference.norms[n];
        }
        out[n] = dot * penalty;
    }
    out
}

/// CIDEr-D of `candidate` against `references`; empty candidates score 0.
pub fn cider(candidate: &str, references: &[CaptionText], profile: &NgramProfile) -> f64 {
    let cand_words = words_of(candidate);
    if cand_words.is_empty() || references.is_empty() {
        return 0.0;
    }
    let cand = tfidf(&cand_words, profile);
    let mut total = 0.0;
    for r in references {
        let sims = similarity(&cand, &tfidf(&words_of(r.as_str()), profile));
        total += sims.iter().sum::<f64>() / MAX_N as f64;
    }
    total / references.len() as f64 * CIDER_SCALE
}

/// Mean of CIDEr and SPICE.
pub fn spider(cider: f64, spice: f64) -> f64 {
    0.5 * (cider + spice)
}

/// Keeps fluent scores and cuts disfluent ones by 90%.
pub fn spider_fl(score: f64, fluent: bool) -> f64 {
    if fluent {
        score
    } else {
        0.1 * score
    }
}
