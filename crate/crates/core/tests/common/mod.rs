#![allow(dead_code)]

use std::collections::HashMap;

use aacap::data::{CaptionText, DatasetSplit, SplitName, TokenSequence, Tokenizer, BOS, EOS, PAD};
use aacap::inference::{Candidate, StepModel};
use aacap::model::{Captioner, ModelConfig, TrainExample};
use aacap::rng;
use aacap::synth::{synth_split, SynthConfig};
use aacap::train::prepare_examples;
use aacap::Result;
use rand::Rng;

pub fn caption(text: &str) -> CaptionText {
    CaptionText::human(text).unwrap()
}

pub fn captions(texts: &[&str]) -> Vec<CaptionText> {
    texts.iter().map(|t| caption(t)).collect()
}

/// Synthetic split of single- and two-event clips.
pub fn synth(num_clips: usize, captions_per_clip: usize, seed: u64) -> DatasetSplit {
    let cfg = SynthConfig {
        num_clips,
        duration_secs: 1.0,
        captions_per_clip,
        mixtures: true,
        seed,
    };
    synth_split(SplitName::Train, &cfg, &format!("s{seed}-")).unwrap()
}

pub fn tiny_model(split: &DatasetSplit, seed: u64) -> Captioner {
    let tokenizer = aacap::data::build_vocabulary(&[split], 1000).unwrap();
    Captioner::new(ModelConfig::tiny(), tokenizer, &mut rng::stream(seed, "init", 0)).unwrap()
}

pub fn examples(model: &Captioner, split: &DatasetSplit) -> Vec<TrainExample> {
    let embedder = model.config.text_embedder.build().unwrap();
    prepare_examples(model, split, embedder.as_ref()).unwrap()
}

/// A decoder given by an explicit table of next-token distributions keyed
/// by prefix; prefixes missing from the table fall back to `default`.
pub struct TableModel {
    pub vocab: usize,
    pub max_len: usize,
    pub table: HashMap<Vec<u32>, Vec<f64>>,
    pub default: Vec<f64>,
}

impl TableModel {
    pub fn set(&mut self, prefix: &[u32], probs: &[f64]) {
        assert_eq!(probs.len(), self.vocab);
        self.table.insert(prefix.to_vec(), probs.to_vec());
    }
}

impl StepModel for TableModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn next_log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        let p = self.table.get(prefix).unwrap_or(&self.default);
        Ok(p.iter().map(|v| v.ln()).collect())
    }
}

/// Which tokens the decoding rules allow after a prefix of `len` tokens.
pub fn allowed(token: u32, len: usize, max_len: usize, specials: &[u32]) -> bool {
    if len >= max_len {
        return token == EOS;
    }
    if token == EOS {
        return len > 1;
    }
    !specials.contains(&token)
}

/// Every terminated sequence the decoding rules admit, with its summed log-probability.
pub fn enumerate_sequences(model: &dyn StepModel, specials: &[u32]) -> Vec<(Vec<u32>, f64)> {
    let mut out = Vec::new();
    let mut stack = vec![(vec![BOS], 0.0)];
    while let Some((prefix, logp)) = stack.pop() {
        let lp = model.next_log_probs(&prefix).unwrap();
        for t in 0..model.vocab_size() as u32 {
            if !allowed(t, prefix.len(), model.max_len(), specials) {
                continue;
            }
            let mut next = prefix.clone();
            next.push(t);
            let score = logp + lp[t as usize];
            if t == EOS {
                out.push((next, score));
            } else {
                stack.push((next, score));
            }
        }
    }
    out
}

pub fn tokens(ids: Vec<u32>, vocab: usize) -> TokenSequence {
    TokenSequence::new(ids, vocab).unwrap()
}

pub fn toy_tokenizer(words: &[&str]) -> Tokenizer {
    let caps = captions(&[&words.join(" ")]);
    Tokenizer::from_captions(&caps, 100).unwrap()
}

pub const SPECIALS: [u32; 2] = [BOS, PAD];

/// Four reserved ids plus `content` word ids; every prefix up to `max_len`
/// gets its own random distribution.
pub fn random_table(seed: u64, content: usize, max_len: usize) -> TableModel {
    let vocab = 4 + content;
    let mut r = rng::seeded(seed);
    let random_dist = |r: &mut rng::Rng| {
        let mut p: Vec<f64> = (0..vocab)
            .map(|t| if t == BOS as usize || t == PAD as usize { 0.0 } else { r.gen_range(0.01..1.0) })
            .collect();
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= z);
        p
    };
    let default = random_dist(&mut r);
    let mut model = TableModel {
        vocab,
        max_len,
        table: HashMap::new(),
        default,
    };
    let mut frontier = vec![vec![BOS]];
    while let Some(prefix) = frontier.pop() {
        let d = random_dist(&mut r);
        model.set(&prefix, &d);
        if prefix.len() < max_len {
            for t in 3..vocab as u32 {
                let mut next = prefix.clone();
                next.push(t);
                frontier.push(next);
            }
        }
    }
    model
}

/// One content token then EOS, with the first-step distribution given.
pub fn one_step_model(first: &[f64]) -> TableModel {
    let vocab = first.len();
    let mut eos = vec![0.0; vocab];
    eos[EOS as usize] = 1.0;
    let mut m = TableModel {
        vocab,
        max_len: 2,
        table: HashMap::new(),
        default: eos,
    };
    m.set(&[BOS], first);
    m
}

/// Greedy follows the likeliest first word into a dead end; the best
/// length-normalized caption starts with the second likeliest one.
pub fn trap_model() -> TableModel {
    let (a, b, c) = (4u32, 5u32, 6u32);
    let mut spread = vec![0.0; 7];
    spread[EOS as usize] = 0.25;
    spread[3] = 0.05;
    spread[a as usize] = 0.25;
    spread[b as usize] = 0.2;
    spread[c as usize] = 0.25;
    let mut m = TableModel {
        vocab: 7,
        max_len: 4,
        table: HashMap::new(),
        default: spread,
    };
    m.set(&[BOS], &[0.0, 0.0, 0.0, 0.02, 0.48, 0.3, 0.2]);
    m.set(&[BOS, b], &[0.0, 0.05, 0.0, 0.0, 0.02, 0.03, 0.9]);
    m.set(&[BOS, b, c], &[0.0, 0.95, 0.0, 0.0, 0.02, 0.02, 0.01]);
    m
}

pub fn exhaustive_best(model: &dyn StepModel) -> Vec<u32> {
    let all = enumerate_sequences(model, &SPECIALS);
    let norm = |(s, lp): &(Vec<u32>, f64)| lp / (s.len() - 1) as f64;
    all.iter()
        .max_by(|x, y| norm(x).total_cmp(&norm(y)).then_with(|| y.0.cmp(&x.0)))
        .unwrap()
        .0
        .clone()
}

pub fn candidate(caption: &str, decoder_loglik: f64, encoder_sim: f64, fluent: bool) -> Candidate {
    let tok = toy_tokenizer(&["w"]);
    Candidate {
        caption: self::caption(caption),
        tokens: tok.tokenize_str("w").unwrap(),
        raw_loglik: decoder_loglik,
        decoder_loglik,
        encoder_sim,
        fluent,
        hybrid_score: None,
    }
}

pub fn random_set(r: &mut rng::Rng, n: usize) -> Vec<Candidate> {
    (0..n)
        .map(|i| candidate(&format!("caption number {i}"), r.gen_range(-4.0..0.0), r.gen_range(-1.0..1.0), true))
        .collect()
}

pub fn brute_force(cands: &[Candidate], w_dec: f64, w_enc: f64) -> String {
    let mut best = (f64::NEG_INFINITY, String::new());
    for c in cands {
        let s = w_dec * c.decoder_loglik + w_enc * c.encoder_sim;
        if s > best.0 {
            best = (s, c.caption.as_str().to_string());
        }
    }
    best.1
}

/// CIDEr-D computed from scratch: string-keyed n-grams, document
/// frequencies over reference sets, clipped cosine per order, Gaussian
/// penalty on the bigram-count difference, mean over orders and references, ×10.
pub fn reference_cider(candidate: &str, refs: &[&str], corpus: &[Vec<&str>]) -> f64 {
    fn grams(s: &str, n: usize) -> HashMap<String, f64> {
        let w: Vec<&str> = s.split_whitespace().collect();
        let mut m = HashMap::new();
        if w.len() >= n {
            for i in 0..=w.len() - n {
                *m.entry(w[i..i + n].join(" ")).or_insert(0.0) += 1.0;
            }
        }
        m
    }
    let num_docs = corpus.len() as f64;
    let df = |g: &str, n: usize| -> f64 {
        corpus
            .iter()
            .filter(|doc| doc.iter().any(|r| grams(r, n).contains_key(g)))
            .count() as f64
    };
    let vec_of = |s: &str, n: usize| -> HashMap<String, f64> {
        grams(s, n)
            .into_iter()
            .map(|(g, tf)| {
                let idf = num_docs.ln() - df(&g, n).max(1.0).ln();
                (g, tf * idf)
            })
            .collect()
    };
    let norm = |v: &HashMap<String, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
    let bigrams = |s: &str| s.split_whitespace().count().saturating_sub(1) as f64;
    let mut total = 0.0;
    for r in refs {
        let delta = bigrams(candidate) - bigrams(r);
        let pen = (-delta * delta / 72.0).exp();
        let mut per_n = 0.0;
        for n in 1..=4 {
            let (vc, vr) = (vec_of(candidate, n), vec_of(r, n));
            let mut dot: f64 = vc.iter().filter_map(|(g, &w)| vr.get(g).map(|&x| w.min(x) * x)).sum();
            let (nc, nr) = (norm(&vc), norm(&vr));
            if nc != 0.0 && nr != 0.0 {
                dot /= nc * nr;
            }
            per_n += dot * pen;
        }
        total += per_n / 4.0;
    }
    10.0 * total / refs.len() as f64
}

pub fn cider_corpus() -> Vec<Vec<&'static str>> {
    vec![
        vec!["a dog barks loudly in the yard", "a dog is barking outside", "the dog barks at a passing car"],
        vec!["rain falls on a metal roof", "heavy rain is falling on the roof"],
        vec!["a bell rings three times", "a church bell is ringing", "bells ring in the distance while birds sing"],
    ]
}

