//! Trains a small captioner for a few epochs, then decodes one held-out clip
//! with greedy search, beam search, and sampling plus hybrid reranking,
//! listing the reranked candidates.
//!
//! cargo run --release -p aacap --example decode

use aacap::data::{build_vocabulary, SplitName};
use aacap::fluency::RuleBasedDetector;
use aacap::inference::{decode_clip, DecodeConfig, DecodeMode};
use aacap::model::{Captioner, ModelConfig};
use aacap::rng;
use aacap::synth::{synth_split, SynthConfig};
use aacap::train::{prepare_examples, train, TrainConfig};

fn main() -> aacap::Result<()> {
    let synth = |name, clips, seed| {
        let cfg = SynthConfig {
            num_clips: clips,
            captions_per_clip: 4,
            seed,
            ..Default::default()
        };
        synth_split(name, &cfg, &format!("{name}-"))
    };
    let train_split = synth(SplitName::Train, 144, 1)?;
    let test_split = synth(SplitName::Evaluation, 4, 2)?;
    let tokenizer = build_vocabulary(&[&train_split], 1000)?;
    let mut model = Captioner::new(ModelConfig::tiny(), tokenizer, &mut rng::stream(0, "init", 0))?;
    let embedder = model.config.text_embedder.build()?;
    let examples = prepare_examples(&model, &train_split, embedder.as_ref())?;
    let config = TrainConfig {
        lr: Some(1e-3),
        batch_size: 32,
        epochs: 8,
        ..Default::default()
    };
    train(&mut model, &examples, &[], &config, |_| {})?;

    for (k, pair) in test_split.pairs().iter().enumerate() {
        let refs: Vec<&str> = pair.captions().iter().map(|c| c.as_str()).collect();
        println!("\nreferences: {}", refs.join(" | "));
        let encoded = model.encode(model.features(pair.waveform())?.frames())?;
        for (label, mode) in [("greedy", DecodeMode::Greedy), ("beam-4", DecodeMode::Beam)] {
            let cfg = DecodeConfig {
                mode,
                ..Default::default()
            };
            let d = decode_clip(&model, &encoded, embedder.as_ref(), &RuleBasedDetector, &cfg, k as u64)?;
            println!("{label:>8}: {}", d.chosen.caption);
        }
        let d = decode_clip(&model, &encoded, embedder.as_ref(), &RuleBasedDetector, &DecodeConfig::default(), k as u64)?;
        println!("{:>8}: {}", "rerank", d.chosen.caption);
        let mut cands = d.candidates.clone();
        cands.sort_by(|a, b| b.hybrid_score.unwrap_or(f64::MIN).total_cmp(&a.hybrid_score.unwrap_or(f64::MIN)));
        cands.dedup_by(|a, b| a.caption == b.caption);
        for c in cands.iter().take(4) {
            println!(
                "          hybrid {:+.3} = loglik {:+.3}, sim {:.3}  {}",
                c.hybrid_score.unwrap_or(f64::NAN),
                c.decoder_loglik,
                c.encoder_sim,
                c.caption
            );
        }
    }
    Ok(())
}
