//! Token-level decoding over any [`StepModel`]: nucleus sampling, greedy and
//! beam search.

use rand::Rng;

use super::StepModel;
use crate::data::{TokenSequence, BOS, EOS, PAD};
use crate::error::{Error, Result};

/// Slack for comparing a cumulative sum against `top_p`, so that e.g.
/// `0.5 + 0.3 + 0.15` counts as reaching `0.95`.
const MASS_EPS: f64 = 1e-12;

/// Top-p truncation: keeps the smallest prefix of tokens, sorted by
/// descending probability with ties by ascending id, whose mass reaches
/// `top_p`, then renormalizes.
pub fn nucleus_filter(probs: &[f64], top_p: f64) -> Result<Vec<f64>> {
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(Error::invalid(format!("top_p must be in (0, 1], got {top_p}")));
    }
    if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::invalid("not a probability distribution"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; probs.len()];
    let mut mass = 0.0;
    for &i in &order {
        if probs[i] == 0.0 {
            break;
        }
        out[i] = probs[i];
        mass += probs[i];
        if mass >= top_p - MASS_EPS {
            break;
        }
    }
    for v in &mut out {
        *v /= mass;
    }
    Ok(out)
}

/// Index drawn from a distribution; zero-probability entries are never chosen.
pub fn draw(probs: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = None;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last = Some(i);
        if u < p {
            return i;
        }
        u -= p;
    }
    last.expect("distribution has positive mass")
}

/// Tokens that may follow `prefix`: never BOS or PAD, no EOS before the
/// first content token, and only EOS once the decoder input is full.
fn allowed(token: usize, prefix_len: usize, max_len: usize) -> bool {
    let t = token as u32;
    if prefix_len >= max_len {
        return t == EOS;
    }
    t != BOS && t != PAD && !(t == EOS && prefix_len == 1)
}

/// `softmax(log_probs / temperature)` restricted to allowed tokens.
fn step_distribution(log_probs: &[f64], prefix_len: usize, max_len: usize, temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = log_probs
        .iter()
        .enumerate()
        .map(|(i, &lp)| {
            if allowed(i, prefix_len, max_len) {
                lp / temperature
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|v| v / z).collect()
}

fn check_model(model: &dyn StepModel) -> Result<()> {
    if model.max_len() < 2 {
        return Err(Error::invalid("max_len must allow at least one content token"));
    }
    if model.vocab_size() <= EOS as usize {
        return Err(Error::invalid("vocabulary too small"));
    }
    Ok(())
}

/// One nucleus-sampled token sequence.
pub fn sample_tokens(
    model: &dyn StepModel,
    temperature: f64,
    top_p: f64,
    rng: &mut impl Rng,
) -> Result<TokenSequence> {
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    check_model(model)?;
    let max_len = model.max_len();
    let mut prefix = vec![BOS];
    loop {
        let log_probs = model.next_log_probs(&prefix)?;
        let probs = step_distribution(&log_probs, prefix.len(), max_len, temperature);
        let kept = nucleus_filter(&probs, top_p)?;
        let token = draw(&kept, rng) as u32;
        prefix.push(token);
        if token == EOS {
            break;
        }
    }
    TokenSequence::new(prefix, model.vocab_size())
}

fn argmax_allowed(log_probs: &[f64], prefix_len: usize, max_len: usize) -> u32 {
    let mut best = None;
    for (i, &lp) in log_probs.iter().enumerate() {
        if !allowed(i, prefix_len, max_len) {
            continue;
        }
        match best {
            Some((_, b)) if lp <= b => {}
            _ => best = Some((i, lp)),
        }
    }
    best.expect("at least one allowed token").0 as u32
}

/// Arg-max decoding; ties go to the lower token id.
pub fn greedy_tokens(model: &dyn StepModel) -> Result<TokenSequence> {
    check_model(model)?;
    let max_len = model.max_len();
    let mut prefix = vec![BOS];
    loop {
        let log_probs = model.next_log_probs(&prefix)?;
        let token = argmax_allowed(&log_probs, prefix.len(), max_len);
        prefix.push(token);
        if token == EOS {
            break;
        }
    }
    TokenSequence::new(prefix, model.vocab_size())
}

/// Number of predicted tokens (content plus EOS) in a sequence.
pub fn scored_len(tokens: &TokenSequence) -> usize {
    tokens.len() - 1
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<u32>,
    logp: f64,
}

fn by_score_then_tokens(a: &Hyp, b: &Hyp) -> std::cmp::Ordering {
    b.logp.total_cmp(&a.logp).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Beam search. Each step keeps the `beam_size` best expansions by
/// cumulative log-probability; hypotheses ending in EOS leave the beam. The
/// finished hypothesis with the best per-token log-probability is returned.
pub fn beam_search_tokens(model: &dyn StepModel, beam_size: usize) -> Result<TokenSequence> {
    if beam_size == 0 {
        return Err(Error::invalid("beam_size must be >= 1"));
    }
    check_model(model)?;
    let max_len = model.max_len();
    let mut live = vec![Hyp {
        tokens: vec![BOS],
        logp: 0.0,
    }];
    let mut finished: Vec<Hyp> = Vec::new();
    while !live.is_empty() {
        let mut expansions = Vec::new();
        for hyp in &live {
            let log_probs = model.next_log_probs(&hyp.tokens)?;
            for (i, &lp) in log_probs.iter().enumerate() {
                if !allowed(i, hyp.tokens.len(), max_len) {
                    continue;
                }
                let mut tokens = hyp.tokens.clone();
                tokens.push(i as u32);
                expansions.push(Hyp {
                    tokens,
                    logp: hyp.logp + lp,
                });
            }
        }
        expansions.sort_by(by_score_then_tokens);
        expansions.truncate(beam_size);
        live.clear();
        for hyp in expansions {
            if *hyp.tokens.last().expect("non-empty") == EOS {
                finished.push(hyp);
            } else {
                live.push(hyp);
            }
        }
    }
    let norm = |h: &Hyp| h.logp / (h.tokens.len() - 1) as f64;
    let best = finished
        .into_iter()
        .min_by(|a, b| norm(b).total_cmp(&norm(a)).then_with(|| a.tokens.cmp(&b.tokens)))
        .expect("every hypothesis terminates by max_len");
    TokenSequence::new(best.tokens, model.vocab_size())
}
