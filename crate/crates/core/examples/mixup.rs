//! Builds a mix-up corpus from synthetic clips with the offline caption
//! merger, saves the JSONL log, reloads it and extends the training split.
//! With AACAP_LLM_REPLAY pointing at a response cache, merges come from
//! the cache instead.
//!
//! cargo run --release -p aacap --example mixup

use aacap::data::SplitName;
use aacap::fluency::RuleBasedDetector;
use aacap::mixup::{build_mixup_corpus, component_level_db, mix_scale, LlmClient, LlmClientConfig, MixupCorpus};
use aacap::synth::{synth_split, SynthConfig};

fn main() -> aacap::Result<()> {
    let split = synth_split(SplitName::Train, &SynthConfig::default(), "clip")?;
    let config = match std::env::var("AACAP_LLM_REPLAY") {
        Ok(cache) => LlmClientConfig {
            endpoint: "replay".into(),
            cache_path: Some(cache.into()),
            replay: true,
            ..Default::default()
        },
        Err(_) => LlmClientConfig::default(),
    };
    let client = LlmClient::new(config)?;
    let corpus = build_mixup_corpus(&split, 20, &client, &RuleBasedDetector, 7)?;
    println!("{} of {} attempts accepted", corpus.accepted_count(), corpus.records.len());
    for rec in corpus.accepted().take(5) {
        let x1 = split.get(&rec.source_id_1).expect("source").waveform();
        let x2 = split.get(&rec.source_id_2).expect("source").waveform();
        let level = component_level_db(x1, x2, mix_scale(x1, x2, rec.gain_db)?);
        println!("{:+.2} dB (measured {:+.2}) {}", rec.gain_db, -level, rec.mixed_caption);
    }

    let path = std::env::temp_dir().join(format!("aacap-mixup-{}.jsonl", std::process::id()));
    corpus.save(&path)?;
    let reloaded = MixupCorpus::load(&path)?;
    let augmented = reloaded.augment(&split)?;
    println!("wrote {}; training split grows from {} to {} pairs", path.display(), split.len(), augmented.len());
    std::fs::remove_file(&path).ok();
    Ok(())
}
