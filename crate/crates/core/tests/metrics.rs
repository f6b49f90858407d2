mod common;

use std::collections::HashSet;

use aacap::data::CaptionText;
use aacap::metrics::{cider, spider, spider_fl, NgramProfile};
use aacap::metrics::{score_items, MetricOptions, ScoredItem};
use common::{captions, reference_cider};
use proptest::prelude::*;

fn profile(c: &[Vec<&str>]) -> (NgramProfile, Vec<Vec<CaptionText>>) {
    let sets: Vec<Vec<CaptionText>> = c.iter().map(|refs| captions(refs)).collect();
    (NgramProfile::from_references(&sets), sets)
}

#[test]
fn identical_candidate_scores_ten_and_disjoint_scores_zero() {
    let c = vec![
        vec!["a dog barks loudly in the yard"],
        vec!["rain falls on a metal roof"],
        vec!["a bell rings three times"],
    ];
    let (p, sets) = profile(&c);
    for (refs, text) in sets.iter().zip(["a dog barks loudly in the yard", "rain falls on a metal roof", "a bell rings three times"]) {
        assert!((cider(text, refs, &p) - 10.0).abs() < 1e-6, "{text}");
    }
    assert_eq!(cider("cats purr softly nearby", &sets[0], &p), 0.0);
    assert_eq!(cider("", &sets[0], &p), 0.0);
}

#[test]
fn hand_corpus_matches_from_scratch_implementation() {
    let c = common::cider_corpus();
    let (p, sets) = profile(&c);
    let candidates = [
        "a dog barks in the yard",
        "rain is falling on a roof",
        "a bell is ringing while birds sing",
        "a dog dog dog barks",
        "birds sing",
    ];
    for cand in candidates {
        for (k, refs) in sets.iter().enumerate() {
            let got = cider(cand, refs, &p);
            let want = reference_cider(cand, &c[k], &c);
            assert!((got - want).abs() < 1e-9, "{cand} vs item {k}: {got} vs {want}");
        }
    }
}

#[test]
fn fl_penalty_is_exactly_ninety_percent() {
    for s in [0.0, 0.3271, 1.0, 7.25, 10.0] {
        assert_eq!(spider_fl(s, false), 0.1 * s);
        assert_eq!(spider_fl(s, true), s);
    }
    assert_eq!(spider(0.8, 0.2), 0.5);
    let items: Vec<ScoredItem> = common::cider_corpus()
        .iter()
        .enumerate()
        .map(|(k, refs)| ScoredItem {
            id: format!("i{k}"),
            caption: refs[0].to_string(),
            fluent: k != 1,
            references: captions(refs),
        })
        .collect();
    let report = score_items(&items, &MetricOptions::default(), serde_json::json!({})).unwrap();
    let row = &report.items[1];
    assert_eq!(row.fl_score, 0.1 * row.cider);
    assert_eq!(report.items[0].fl_score, report.items[0].cider);
    let mean_fl = report.items.iter().map(|r| r.fl_score).sum::<f64>() / 3.0;
    assert!((report.corpus.cider_fl.unwrap() - mean_fl).abs() < 1e-12);
    assert_eq!(report.fl_base, "cider");
    assert!((report.corpus.fluent_fraction - 2.0 / 3.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cider_ignores_reference_and_item_order(rot in 0usize..3, cand_idx in 0usize..3, ref_rot in 0usize..3) {
        let c = common::cider_corpus();
        let (p, sets) = profile(&c);
        let mut rotated = c.clone();
        rotated.rotate_left(rot);
        let (p2, _) = profile(&rotated);
        let cand = c[cand_idx][0];
        for refs in &sets {
            let base = cider(cand, refs, &p);
            let mut shuffled = refs.clone();
            let k = ref_rot % shuffled.len();
            shuffled.rotate_left(k);
            prop_assert!((cider(cand, &shuffled, &p) - base).abs() < 1e-12);
            prop_assert!((cider(cand, refs, &p2) - base).abs() < 1e-12);
            prop_assert!(base >= 0.0);
        }
    }

    #[test]
    fn cider_of_words_absent_from_references_is_zero(words in prop::collection::vec("[q-z]{3,6}", 1..8)) {
        let c = common::cider_corpus();
        let (p, sets) = profile(&c);
        let vocab: HashSet<&str> = c.iter().flatten().flat_map(|r| r.split_whitespace()).collect();
        prop_assume!(words.iter().all(|w| !vocab.contains(w.as_str())));
        prop_assert_eq!(cider(&words.join(" "), &sets[0], &p), 0.0);
    }
}
