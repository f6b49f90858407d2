//! Overfits a tiny model on 16 synthetic clips and checks that greedy
//! decoding reproduces every training caption.
//!
//! cargo run --release -p aacap --example overfit

use std::time::Instant;

use aacap::data::{build_vocabulary, SplitName};
use aacap::fluency::AcceptAll;
use aacap::inference::{greedy, ClipScorer, LoglikNormalization};
use aacap::model::{Captioner, ModelConfig};
use aacap::rng;
use aacap::synth::{synth_split, SynthConfig};
use aacap::train::{prepare_examples, train, TrainConfig};

fn main() -> aacap::Result<()> {
    let split = synth_split(
        SplitName::Train,
        &SynthConfig {
            num_clips: 16,
            captions_per_clip: 1,
            ..Default::default()
        },
        "clip",
    )?;
    let tokenizer = build_vocabulary(&[&split], 1000)?;
    let mut model = Captioner::new(ModelConfig::tiny(), tokenizer, &mut rng::stream(1, "init", 0))?;
    let embedder = model.config.text_embedder.build()?;
    let examples = prepare_examples(&model, &split, embedder.as_ref())?;

    let config = TrainConfig {
        lr: Some(1e-3),
        batch_size: 16,
        epochs: 500,
        max_steps: Some(500),
        seed: 1,
        ..Default::default()
    };
    let start = Instant::now();
    let outcome = train(&mut model, &examples, &examples, &config, |s| {
        if s.step % 50 == 0 {
            println!(
                "step {:>3}  nll/token {:.4}  infonce {:.4}  ({:.1}s)",
                s.step,
                s.loss.per_token_nll(),
                s.loss.infonce,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    let best = model.batch_loss(&examples, &config.contrastive)?;
    println!(
        "best epoch {} accuracy {:.3}; per-token nll {:.4}",
        outcome.best_epoch,
        outcome.best_val_accuracy,
        best.per_token_nll()
    );

    let mut exact = 0;
    for pair in split.pairs() {
        let features = model.features(pair.waveform())?;
        let enc = model.encode(features.frames())?;
        let bound = model.bind(&enc.memory);
        let scorer = ClipScorer {
            model: &bound,
            tokenizer: &model.tokenizer,
            audio: &enc.embedding,
            embedder: embedder.as_ref(),
            detector: &AcceptAll,
            normalization: LoglikNormalization::PerToken,
        };
        let out = greedy(&scorer)?;
        let target = &pair.captions()[0];
        exact += usize::from(out.caption.as_str() == target.as_str());
        println!("{:<45} -> {}", target.as_str(), out.caption);
    }
    println!("{exact}/16 captions reproduced in {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
