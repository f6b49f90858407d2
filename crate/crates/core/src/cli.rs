//! Library side of the command-line entry points. Each command takes a
//! fully resolved [`RunConfig`]; the binary only parses flags into it.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::wav::load_waveform;
use crate::data::{build_vocabulary, load_dataset, DatasetSplit, LoadOptions, SplitName};
use crate::error::{Error, Result};
use crate::fluency::RuleBasedDetector;
use crate::inference::{decode_clip, write_candidate_dump, DecodeConfig, DecodeMode};
use crate::metrics::{evaluate_split, MetricOptions, MetricReport};
use crate::mixup::{build_mixup_corpus, LlmClient, LlmClientConfig, MixupCorpus};
use crate::model::{Captioner, ModelConfig};
use crate::rng;
use crate::train::{prepare_examples, train, Stage, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub min_caption_words: Option<usize>,
}

/// Everything a command can be configured with. Loaded from TOML; every
/// section and field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub llm: LlmClientConfig,
    pub metrics: MetricOptions,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Loads a manifest; audio paths resolve against the manifest's directory.
pub fn load_split(manifest: &Path, name: SplitName, data: &DataConfig) -> Result<DatasetSplit> {
    let root = manifest.parent().unwrap_or(Path::new("."));
    let options = LoadOptions {
        min_caption_words: data.min_caption_words,
    };
    load_dataset(root, manifest, name, &options)
}

pub struct TrainRequest<'a> {
    pub train_manifest: &'a Path,
    pub validation_manifest: Option<&'a Path>,
    /// Mix-up log whose accepted records extend the training split.
    pub mixup_log: Option<&'a Path>,
    /// Checkpoint whose parameters and vocabulary the run starts from.
    pub resume: Option<&'a Path>,
    pub output: &'a Path,
}

/// Trains and writes the best checkpoint to `request.output`.
pub fn cmd_train(config: &RunConfig, request: &TrainRequest) -> Result<(Checkpoint, TrainOutcome)> {
    let mut train_split = load_split(request.train_manifest, SplitName::Train, &config.data)?;
    if let Some(log) = request.mixup_log {
        train_split = MixupCorpus::load(log)?.augment(&train_split)?;
    }
    let validation = request
        .validation_manifest
        .map(|m| load_split(m, SplitName::Validation, &config.data))
        .transpose()?;
    let mut model = match request.resume {
        Some(path) => Checkpoint::load(path)?.model,
        None => {
            if config.train.stage == Stage::Finetune {
                log::warn!("finetune stage without a checkpoint to resume from");
            }
            let tokenizer = build_vocabulary(&[&train_split], config.train.max_vocab)?;
            let mut init = rng::stream(config.train.seed, "init", 0);
            Captioner::new(config.model.clone(), tokenizer, &mut init)?
        }
    };
    let embedder = model.config.text_embedder.build()?;
    let train_examples = prepare_examples(&model, &train_split, embedder.as_ref())?;
    let val_examples = match &validation {
        Some(v) => prepare_examples(&model, v, embedder.as_ref())?,
        None => Vec::new(),
    };
    let outcome = train(&mut model, &train_examples, &val_examples, &config.train, |s| {
        log::debug!("step {} loss {:.5}", s.step, s.loss.total);
    })?;
    let checkpoint = Checkpoint::new(
        model,
        config.train.clone(),
        Some(outcome.optimizer.clone()),
        outcome.steps.len() as u64,
        (!val_examples.is_empty()).then_some(outcome.best_val_accuracy),
    );
    checkpoint.save(request.output)?;
    Ok((checkpoint, outcome))
}

/// Captions each audio file. Writes `audio_path,caption` rows in input
/// order, and a candidate dump when sampling and `candidates` is given.
pub fn cmd_generate(
    checkpoint: &Path,
    audio: &[PathBuf],
    decode: &DecodeConfig,
    output: &Path,
    candidates: Option<&Path>,
) -> Result<Vec<String>> {
    let model = Checkpoint::load(checkpoint)?.model;
    let embedder = model.config.text_embedder.build()?;
    let mut dump = match (candidates, decode.mode) {
        (Some(p), DecodeMode::Sample) => {
            Some(std::io::BufWriter::new(std::fs::File::create(p).map_err(|e| Error::io(p, e))?))
        }
        _ => None,
    };
    let mut writer = csv::Writer::from_path(output).map_err(|e| Error::Config(e.to_string()))?;
    writer
        .write_record(["audio_path", "caption"])
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut captions = Vec::with_capacity(audio.len());
    for (k, path) in audio.iter().enumerate() {
        let wave = load_waveform(path)?;
        let features = model.features(&wave)?;
        let encoded = model.encode(features.frames())?;
        let decoded = decode_clip(&model, &encoded, embedder.as_ref(), &RuleBasedDetector, decode, k as u64)?;
        if let Some(d) = dump.as_mut() {
            write_candidate_dump(d, &path.display().to_string(), &decoded)?;
        }
        let caption = decoded.chosen.caption.as_str().to_owned();
        writer
            .write_record([path.display().to_string().as_str(), caption.as_str()])
            .map_err(|e| Error::Config(e.to_string()))?;
        captions.push(caption);
    }
    writer.flush().map_err(|e| Error::io(output, e))?;
    if let Some(mut d) = dump {
        d.flush()?;
    }
    Ok(captions)
}

/// Evaluates a checkpoint on a manifest and writes the JSON report.
pub fn cmd_evaluate(
    checkpoint: &Path,
    manifest: &Path,
    config: &RunConfig,
    output: &Path,
) -> Result<MetricReport> {
    let model = Checkpoint::load(checkpoint)?.model;
    let split = load_split(manifest, SplitName::Evaluation, &config.data)?;
    let embedder = model.config.text_embedder.build()?;
    let (report, _) = evaluate_split(
        &model,
        &split,
        &config.decode,
        embedder.as_ref(),
        &RuleBasedDetector,
        &config.metrics,
    )?;
    report.save(output)?;
    Ok(report)
}

/// Builds a mix-up corpus from a manifest and writes its JSONL log.
pub fn cmd_mixup(manifest: &Path, n: usize, llm: &LlmClientConfig, seed: u64, output: &Path, data: &DataConfig) -> Result<MixupCorpus> {
    let client = LlmClient::new(llm.clone())?;
    let split = load_split(manifest, SplitName::Train, data)?;
    let corpus = build_mixup_corpus(&split, n, &client, &RuleBasedDetector, seed)?;
    if let Some(reason) = &corpus.exhausted {
        log::warn!(
            "mix-up corpus is partial: {} of {n} accepted ({reason})",
            corpus.accepted_count()
        );
    }
    corpus.save(output)?;
    Ok(corpus)
}
