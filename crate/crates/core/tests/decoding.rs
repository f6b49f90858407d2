mod common;

use aacap::data::{BOS, EOS};
use aacap::fluency::RuleBasedDetector;
use aacap::inference::{
    beam_search_tokens, candidate_rng, decoder_score, draw, greedy_tokens, nucleus_filter, rerank, sample_caption,
    sample_tokens, Candidate, ClipScorer, LoglikNormalization, RerankWeights, SamplingConfig, StepModel,
};
use aacap::rng;
use common::{
    brute_force, candidate, enumerate_sequences, exhaustive_best, one_step_model, random_set, random_table, trap_model,
    SPECIALS,
};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn nucleus_truncates_exactly_the_tail_and_samples_in_proportion() {
    let q = [0.5, 0.3, 0.15, 0.05];
    let filtered = nucleus_filter(&q, 0.95).unwrap();
    assert_eq!(filtered[3], 0.0);
    assert!(filtered[..3].iter().all(|&p| p > 0.0));

    // The same distribution placed on content ids 4..8, drawn through the sampler.
    let model = one_step_model(&[0.0, 0.0, 0.0, 0.0, 0.5, 0.3, 0.15, 0.05]);
    let n = 10_000;
    let mut counts = [0usize; 4];
    let mut r = rng::seeded(99);
    for _ in 0..n {
        let seq = sample_tokens(&model, 1.0, 0.95, &mut r).unwrap();
        assert_eq!(seq.ids().len(), 3);
        counts[seq.ids()[1] as usize - 4] += 1;
    }
    assert_eq!(counts[3], 0, "a truncated token was sampled");
    for k in 0..3 {
        let p = q[k] / 0.95;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        let dev = (counts[k] as f64 - n as f64 * p).abs();
        assert!(dev <= 3.0 * sigma, "token {k}: {} vs {}", counts[k], n as f64 * p);
    }
}

#[test]
fn draw_never_picks_zero_mass() {
    let mut r = rng::seeded(3);
    for _ in 0..5000 {
        let i = draw(&[0.0, 0.7, 0.0, 0.3], &mut r);
        assert!(i == 1 || i == 3);
    }
}

#[test]
fn near_zero_temperature_sampling_is_greedy() {
    for seed in 0..30 {
        let model = random_table(seed, 3, 4);
        let greedy = greedy_tokens(&model).unwrap();
        let sampled = sample_tokens(&model, 1e-4, 0.95, &mut rng::seeded(seed + 1000)).unwrap();
        assert_eq!(sampled, greedy, "seed {seed}");
    }
}

#[test]
fn beam_of_one_is_greedy() {
    for seed in 0..50 {
        let model = random_table(seed, 3, 4);
        assert_eq!(beam_search_tokens(&model, 1).unwrap(), greedy_tokens(&model).unwrap(), "seed {seed}");
    }
}

#[test]
fn beam_four_finds_the_exhaustive_optimum_on_the_trap_model() {
    let model = trap_model();
    let all = enumerate_sequences(&model, &SPECIALS);
    assert!(all.len() <= 7usize.pow(3));
    let best = exhaustive_best(&model);
    assert_eq!(best, vec![BOS, 5, 6, EOS]);
    assert_eq!(beam_search_tokens(&model, 4).unwrap().ids(), &best[..]);
    assert_ne!(greedy_tokens(&model).unwrap().ids(), &best[..]);
}

#[test]
fn beam_wide_enough_to_hold_every_prefix_is_exact() {
    // 4 admissible words and max_len 3: at most 4 × 5 expansions per step,
    // so a beam of 20 never prunes.
    for seed in 0..20 {
        let model = random_table(seed, 3, 3);
        assert_eq!(beam_search_tokens(&model, 20).unwrap().ids(), &exhaustive_best(&model)[..], "seed {seed}");
    }
}

#[test]
fn decoder_score_equals_stepwise_rescoring_on_a_real_model() {
    let split = common::synth(4, 1, 8);
    let model = common::tiny_model(&split, 2);
    let features = model.features(split.pairs()[0].waveform()).unwrap();
    let encoded = model.encode(features.frames()).unwrap();
    let bound = model.bind(&encoded.memory);
    let embedder = model.config.text_embedder.build().unwrap();
    let scorer = ClipScorer {
        model: &bound,
        tokenizer: &model.tokenizer,
        audio: &encoded.embedding,
        embedder: embedder.as_ref(),
        detector: &RuleBasedDetector,
        normalization: LoglikNormalization::PerToken,
    };
    let cfg = SamplingConfig::default();
    for k in 0..10 {
        let cand = sample_caption(&scorer, &cfg, &mut candidate_rng(5, 0, k)).unwrap();
        let ids = cand.tokens.ids();
        let stepwise: f64 = (1..ids.len())
            .map(|n| bound.next_log_probs(&ids[..n]).unwrap()[ids[n] as usize])
            .sum();
        let raw = decoder_score(&bound, &cand.tokens, LoglikNormalization::Raw).unwrap();
        assert!((raw - stepwise).abs() < 1e-10);
        assert!((cand.raw_loglik - stepwise).abs() < 1e-10);
        assert!((cand.decoder_loglik - stepwise / (ids.len() - 1) as f64).abs() < 1e-10);
    }
}

#[test]
fn rerank_matches_brute_force_and_degenerates_to_single_scores() {
    let mut r = rng::seeded(2024);
    for _ in 0..100 {
        let n = r.gen_range(1..60);
        let cands = random_set(&mut r, n);
        let (wd, we) = (r.gen_range(0.0..1.0), r.gen_range(0.01..1.0));
        let w = RerankWeights::new(wd, we).unwrap();
        assert_eq!(rerank(cands.clone(), &w, true).unwrap().caption.as_str(), brute_force(&cands, wd, we));
        let dec_only = rerank(cands.clone(), &RerankWeights::new(1.0, 0.0).unwrap(), true).unwrap();
        let best_dec = cands.iter().max_by(|a, b| a.decoder_loglik.total_cmp(&b.decoder_loglik)).unwrap();
        assert_eq!(dec_only.caption, best_dec.caption);
        let enc_only = rerank(cands.clone(), &RerankWeights::new(0.0, 1.0).unwrap(), true).unwrap();
        let best_enc = cands.iter().max_by(|a, b| a.encoder_sim.total_cmp(&b.encoder_sim)).unwrap();
        assert_eq!(enc_only.caption, best_enc.caption);
    }
}

#[test]
fn rerank_reference_example_and_fluency_gate() {
    let w = RerankWeights::default();
    let a = candidate("a dog barks", -0.8, 0.9, true);
    let b = candidate("a dog is barking", -0.4, 0.6, true);
    assert_eq!(rerank(vec![a.clone(), b.clone()], &w, true).unwrap().caption.as_str(), "a dog barks");
    let high_but_disfluent = candidate("a dog dog", 0.0, 1.0, false);
    assert_eq!(
        rerank(vec![high_but_disfluent.clone(), b.clone()], &w, true).unwrap().caption.as_str(),
        "a dog is barking"
    );
    assert_eq!(rerank(vec![high_but_disfluent.clone(), b], &w, false).unwrap().caption.as_str(), "a dog dog");
    assert_eq!(rerank(vec![high_but_disfluent], &w, true).unwrap().caption.as_str(), "a dog dog");
    assert!(rerank(vec![], &w, true).is_err());
    assert!(RerankWeights::new(0.0, 0.0).is_err());
}

#[test]
fn rerank_ties_prefer_loglik_then_lexicographic() {
    let w = RerankWeights::new(0.0, 1.0).unwrap();
    let a = candidate("b caption runs", -1.0, 0.5, true);
    let b = candidate("a caption runs", -2.0, 0.5, true);
    assert_eq!(rerank(vec![b.clone(), a.clone()], &w, true).unwrap().caption.as_str(), "b caption runs");
    let c = candidate("a caption runs", -1.0, 0.5, true);
    assert_eq!(rerank(vec![a, c], &w, true).unwrap().caption.as_str(), "a caption runs");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn nucleus_output_is_a_valid_truncation(raw in prop::collection::vec(0.0f64..1.0, 1..12), p in 0.01f64..=1.0) {
        let z: f64 = raw.iter().sum();
        prop_assume!(z > 1e-6);
        let probs: Vec<f64> = raw.iter().map(|v| v / z).collect();
        let out = nucleus_filter(&probs, p).unwrap();
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let kept_mass: f64 = probs.iter().zip(&out).filter(|(_, o)| **o > 0.0).map(|(q, _)| q).sum();
        prop_assert!(kept_mass >= p - 1e-9);
        for (i, (&q, &o)) in probs.iter().zip(&out).enumerate() {
            if o > 0.0 {
                prop_assert!((o - q / kept_mass).abs() < 1e-9);
                // Anything strictly more likely than a kept token is kept too.
                for (j, &qj) in probs.iter().enumerate() {
                    if qj > q {
                        prop_assert!(out[j] > 0.0, "{} kept but {} dropped", i, j);
                    }
                }
            }
        }
    }

    #[test]
    fn nucleus_support_grows_with_p(raw in prop::collection::vec(0.01f64..1.0, 2..10), p1 in 0.05f64..1.0, p2 in 0.05f64..1.0) {
        let z: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|v| v / z).collect();
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        let a = nucleus_filter(&probs, lo).unwrap();
        let b = nucleus_filter(&probs, hi).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(!(*x > 0.0 && *y == 0.0));
        }
    }

    #[test]
    fn rerank_is_order_invariant_and_monotone(seed in 0u64..100_000, n in 1usize..20, shift in 0.0f64..2.0) {
        let mut r = rng::seeded(seed);
        let cands = random_set(&mut r, n);
        let w = RerankWeights::default();
        let chosen = rerank(cands.clone(), &w, true).unwrap();
        let mut reversed = cands.clone();
        reversed.reverse();
        prop_assert_eq!(&rerank(reversed, &w, true).unwrap().caption, &chosen.caption);
        if n == 1 {
            prop_assert_eq!(&chosen.caption, &cands[0].caption);
        }
        // Raising the winner's similarity keeps it the winner.
        let boosted: Vec<Candidate> = cands
            .into_iter()
            .map(|mut c| {
                if c.caption == chosen.caption {
                    c.encoder_sim += shift;
                }
                c
            })
            .collect();
        prop_assert_eq!(&rerank(boosted, &w, true).unwrap().caption, &chosen.caption);
    }
}
