//! The command flow end to end on a synthetic corpus written to disk:
//! mixup, train with the mix-up log, generate and evaluate.
//!
//! cargo run --release -p aacap --example pipeline

use aacap::cli::{cmd_evaluate, cmd_generate, cmd_mixup, cmd_train, RunConfig, TrainRequest};
use aacap::data::SplitName;
use aacap::model::ModelConfig;
use aacap::synth::{synth_split, write_corpus, SynthConfig};

fn main() -> aacap::Result<()> {
    let root = std::env::temp_dir().join(format!("aacap-pipeline-{}", std::process::id()));
    let synth = |name, clips, seed| {
        let cfg = SynthConfig {
            num_clips: clips,
            seed,
            ..Default::default()
        };
        synth_split(name, &cfg, &format!("{name}-"))
    };
    let train_manifest = write_corpus(&synth(SplitName::Train, 96, 1)?, &root.join("train"))?;
    let val_manifest = write_corpus(&synth(SplitName::Validation, 24, 2)?, &root.join("val"))?;
    let test_split = synth(SplitName::Evaluation, 24, 3)?;
    let test_manifest = write_corpus(&test_split, &root.join("test"))?;

    let mut config = RunConfig {
        model: ModelConfig::tiny(),
        ..Default::default()
    };
    config.train.lr = Some(1e-3);
    config.train.epochs = 6;

    let mixup_log = root.join("mixup.jsonl");
    let corpus = cmd_mixup(&train_manifest, 48, &config.llm, 0, &mixup_log, &config.data)?;
    println!("mixup: {} accepted records -> {}", corpus.accepted_count(), mixup_log.display());

    let checkpoint = root.join("model.ckpt");
    let request = TrainRequest {
        train_manifest: &train_manifest,
        validation_manifest: Some(&val_manifest),
        mixup_log: Some(&mixup_log),
        resume: None,
        output: &checkpoint,
    };
    let (_, outcome) = cmd_train(&config, &request)?;
    println!(
        "train: {} steps, best epoch {} with validation accuracy {:.3}",
        outcome.steps.len(),
        outcome.best_epoch,
        outcome.best_val_accuracy
    );

    let audio: Vec<_> = test_split.pairs()[..2]
        .iter()
        .map(|p| root.join("test").join(format!("{}.wav", p.id())))
        .collect();
    let captions = cmd_generate(&checkpoint, &audio, &config.decode, &root.join("captions.csv"), None)?;
    for (path, caption) in audio.iter().zip(&captions) {
        println!("generate: {} -> {caption}", path.file_name().unwrap_or_default().to_string_lossy());
    }

    let report = cmd_evaluate(&checkpoint, &test_manifest, &config, &root.join("report.json"))?;
    println!(
        "evaluate: CIDEr {:.3}, CIDEr-FL {:.3}, fluent {:.0}%",
        report.corpus.cider,
        report.corpus.cider_fl.unwrap_or(f64::NAN),
        100.0 * report.corpus.fluent_fraction
    );
    std::fs::remove_dir_all(&root).ok();
    Ok(())
}
