mod common;

use std::path::PathBuf;

use aacap::data::{AudioCaptionPair, DatasetSplit, SplitName, MIXUP_WORD_LIMIT};
use aacap::fluency::{FluencyDetector, RuleBasedDetector};
use aacap::mixup::{
    build_mixup_corpus, component_level_db, mix_scale, mix_waveforms, offline_merge, prompt_hash, fill_prompt,
    request_caption_mixup, sample_mix_gain, LlmClient, LlmClientConfig, MixupCorpus, DEFAULT_PROMPT, MAX_GAIN_DB,
};
use aacap::synth::{render, CLASSES};
use aacap::{rng, Error};
use rand::Rng;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/llm_cache.json")
}

fn replay_client() -> LlmClient {
    LlmClient::new(LlmClientConfig {
        endpoint: "https://llm.example.invalid/v1/complete".into(),
        cache_path: Some(fixture()),
        replay: true,
        ..Default::default()
    })
    .unwrap()
}

fn offline_client() -> LlmClient {
    LlmClient::new(LlmClientConfig::default()).unwrap()
}

#[test]
fn thousand_mixes_follow_the_rms_law() {
    let mut r = rng::seeded(7);
    for k in 0..1000 {
        let d1 = r.gen_range(0.05..0.3);
        let d2 = r.gen_range(0.05..0.3);
        let x1 = render(&[r.gen_range(0..CLASSES.len())], d1, &mut r).unwrap();
        let x2 = render(&[r.gen_range(0..CLASSES.len())], d2, &mut r).unwrap();
        let gain = sample_mix_gain(&mut r);
        assert!(gain.abs() <= MAX_GAIN_DB);
        let g = mix_scale(&x1, &x2, gain).unwrap();
        let achieved = component_level_db(&x1, &x2, g);
        assert!((achieved + gain).abs() < 1e-6, "mix {k}: {achieved} vs {gain}");
        let mixed = mix_waveforms(&format!("a{k}"), &x1, &format!("b{k}"), &x2, gain).unwrap();
        assert_eq!(mixed.len(), x1.len().max(x2.len()));
        assert!(mixed.samples().iter().all(|v| v.abs() <= 1.0));
    }
}

#[test]
fn offline_corpus_replays_to_identical_waveforms() {
    let split = common::synth(40, 3, 5);
    let corpus = build_mixup_corpus(&split, 1000, &offline_client(), &RuleBasedDetector, 13).unwrap();
    assert_eq!(corpus.accepted_count(), 1000);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mixup.jsonl");
    corpus.save(&path).unwrap();
    let back = MixupCorpus::load(&path).unwrap();
    assert_eq!(back.records, corpus.records);
    for rec in corpus.accepted() {
        assert_ne!(rec.source_id_1, rec.source_id_2);
        assert!(rec.gain_db.abs() <= MAX_GAIN_DB);
        assert!(rec.mixed_caption.split_whitespace().count() <= MIXUP_WORD_LIMIT);
        let x1 = split.get(&rec.source_id_1).unwrap().waveform();
        let x2 = split.get(&rec.source_id_2).unwrap().waveform();
        let g = mix_scale(x1, x2, rec.gain_db).unwrap();
        assert!((component_level_db(x1, x2, g) + rec.gain_db).abs() < 1e-6);
    }
    for (a, b) in corpus.accepted().zip(back.accepted()) {
        let (wa, wb) = (a.mix(&split).unwrap(), b.mix(&split).unwrap());
        let bits = |w: &aacap::data::Waveform| w.samples().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&wa), bits(&wb));
    }
    let augmented = back.augment(&split).unwrap();
    assert_eq!(augmented.len(), split.len() + 1000);
}

#[test]
fn offline_merges_of_fluent_captions_stay_fluent() {
    let split = common::synth(64, 3, 9);
    let d = RuleBasedDetector;
    let mut r = rng::seeded(4);
    let mut fluent = 0;
    for _ in 0..1000 {
        let i = r.gen_range(0..split.len());
        let mut j = r.gen_range(0..split.len() - 1);
        if j >= i {
            j += 1;
        }
        let c1 = &split.pairs()[i].captions()[r.gen_range(0..3)];
        let c2 = &split.pairs()[j].captions()[r.gen_range(0..3)];
        fluent += usize::from(d.is_fluent(&offline_merge(c1.as_str(), c2.as_str())));
    }
    assert!(fluent >= 990, "{fluent} of 1000 fluent");
}

#[test]
fn seeded_offline_runs_are_byte_identical() {
    let split = common::synth(12, 2, 1);
    let run = || {
        let c = build_mixup_corpus(&split, 10, &offline_client(), &RuleBasedDetector, 21).unwrap();
        let mut buf = Vec::new();
        c.write_jsonl(&mut buf).unwrap();
        (c, buf)
    };
    let (c, a) = run();
    let (_, b) = run();
    assert_eq!(a, b);
    assert_eq!(c.records.len(), 10);
    assert!(c.records.iter().all(|r| r.provider == "offline" && r.accepted));
    let other = build_mixup_corpus(&split, 10, &offline_client(), &RuleBasedDetector, 22).unwrap();
    assert_ne!(other.records, c.records);
}

#[test]
fn zero_requested_gives_a_header_only_log_and_unchanged_split() {
    let split = common::synth(3, 1, 2);
    let c = build_mixup_corpus(&split, 0, &offline_client(), &RuleBasedDetector, 0).unwrap();
    let mut buf = Vec::new();
    c.write_jsonl(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.contains("\"format\":\"aacap-mixup\""));
    let same = c.augment(&split).unwrap();
    assert_eq!(same.len(), split.len());
}

#[test]
fn replay_serves_the_cached_table_transcripts() {
    let client = replay_client();
    assert_eq!(client.provider(), "https://llm.example.invalid/v1/complete");
    let rows = [
        (
            "water flowing over some rocks throughout a creek",
            "in the distance fireworks pop and crackle constantly as they are set off",
            "a serene creek babbles over rocks as distant fireworks pop and crackle in celebration",
        ),
        (
            "a muffled object is dragged along a surface in a room that echoes",
            "several dogs barking with many birds making noise in the background",
            "dogs bark in a room that echoes while a muffled object is dragged as birds chirp faintly in the background",
        ),
        (
            "a gate squeals as it sways while birds chirp in the background",
            "a machine is whirring loudly at first and then slowly shuts off",
            "as the gate sways and creaks a nearby machine loudly whirs before slowly powering down amidst chirping birds",
        ),
    ];
    for (c1, c2, want) in rows {
        let resp = client.complete(c1, c2).unwrap();
        assert_eq!(resp.text, want);
        assert_eq!(resp.prompt_hash, prompt_hash(&fill_prompt(DEFAULT_PROMPT, c1, c2)));
        let merged = request_caption_mixup(&common::caption(c1), &common::caption(c2), &client).unwrap();
        assert_eq!(merged.as_str(), want);
        assert!(merged.word_count() <= MIXUP_WORD_LIMIT);
        assert!(RuleBasedDetector.is_fluent(want));
    }
    assert!(matches!(client.complete("a bird sings", "a car passes"), Err(Error::Llm(_))));
}

#[test]
fn over_length_replies_are_rejected_and_exhaust_the_budget() {
    let pairs = [("x1", "a dog barks"), ("x2", "rain falls")]
        .iter()
        .enumerate()
        .map(|(k, (id, cap))| {
            let wave = render(&[k], 0.1, &mut rng::seeded(k as u64)).unwrap();
            AudioCaptionPair::new(*id, wave, vec![common::caption(cap)]).unwrap()
        })
        .collect();
    let split = DatasetSplit::new(SplitName::Train, pairs).unwrap();
    let corpus = build_mixup_corpus(&split, 1, &replay_client(), &RuleBasedDetector, 0).unwrap();
    assert_eq!(corpus.accepted_count(), 0);
    assert_eq!(corpus.records.len(), 4);
    assert!(corpus.records.iter().all(|r| r.mixed_caption.split_whitespace().count() == 30));
    assert!(corpus.exhausted.is_some());
    assert!(request_caption_mixup(&common::caption("a dog barks"), &common::caption("rain falls"), &replay_client()).is_err());
}

#[test]
fn online_mode_without_a_key_is_a_configuration_error() {
    let cfg = LlmClientConfig {
        endpoint: "https://llm.example.invalid/v1/complete".into(),
        api_key_env: "AACAP_MIXUP_TEST_UNSET_KEY".into(),
        ..Default::default()
    };
    assert!(matches!(LlmClient::new(cfg), Err(Error::Config(_))));
}
