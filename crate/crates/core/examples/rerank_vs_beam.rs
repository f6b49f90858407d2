//! Trains a toy captioner, then compares beam search against sampling with
//! hybrid reranking on held-out synthetic clips, over several sampling seeds.
//!
//! cargo run --release -p aacap --example rerank_vs_beam [trials] [epochs]

use std::time::Instant;

use aacap::data::{build_vocabulary, SplitName};
use aacap::fluency::RuleBasedDetector;
use aacap::inference::{DecodeConfig, DecodeMode};
use aacap::metrics::{evaluate_split, MetricOptions};
use aacap::model::{Captioner, ModelConfig};
use aacap::rng;
use aacap::synth::{synth_split, SynthConfig};
use aacap::train::{prepare_examples, train, TrainConfig};

fn main() -> aacap::Result<()> {
    let trials: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let start = Instant::now();
    let synth = |name, clips, seed| {
        let cfg = SynthConfig {
            num_clips: clips,
            captions_per_clip: 4,
            seed,
            ..Default::default()
        };
        synth_split(name, &cfg, &format!("{name}-"))
    };
    let train_split = synth(SplitName::Train, 288, 100)?;
    let val_split = synth(SplitName::Validation, 72, 150)?;
    let test_split = synth(SplitName::Evaluation, 200, 200)?;

    let tokenizer = build_vocabulary(&[&train_split], 1000)?;
    let mut model = Captioner::new(ModelConfig::tiny(), tokenizer, &mut rng::stream(0, "init", 0))?;
    let embedder = model.config.text_embedder.build()?;
    let train_set = prepare_examples(&model, &train_split, embedder.as_ref())?;
    let val_set = prepare_examples(&model, &val_split, embedder.as_ref())?;
    let config = TrainConfig {
        lr: Some(1e-3),
        batch_size: 32,
        epochs: std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(12),
        ..Default::default()
    };
    let outcome = train(&mut model, &train_set, &val_set, &config, |_| {})?;
    println!(
        "trained {} steps, best epoch {} (accuracy {:.3}) in {:.1}s",
        outcome.steps.len(),
        outcome.best_epoch,
        outcome.best_val_accuracy,
        start.elapsed().as_secs_f64()
    );

    let opts = MetricOptions::default();
    let beam = DecodeConfig {
        mode: DecodeMode::Beam,
        beam_size: 4,
        ..Default::default()
    };
    let (beam_report, _) = evaluate_split(&model, &test_split, &beam, embedder.as_ref(), &RuleBasedDetector, &opts)?;
    println!("beam-4 CIDEr {:.4} ({:.1}s)", beam_report.corpus.cider, start.elapsed().as_secs_f64());

    let mut wins = 0;
    for seed in 0..trials {
        let mut sample = DecodeConfig::default();
        sample.sampling.seed = seed;
        let (report, _) = evaluate_split(&model, &test_split, &sample, embedder.as_ref(), &RuleBasedDetector, &opts)?;
        let win = report.corpus.cider >= beam_report.corpus.cider;
        wins += usize::from(win);
        println!(
            "seed {seed}: sampling-50 + rerank CIDEr {:.4} {} ({:.1}s)",
            report.corpus.cider,
            if win { ">= beam" } else { "< beam" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("{wins}/{trials} trials at or above beam search");
    Ok(())
}
