//! Caption-quality metrics and evaluation reports.
//!
//! CIDEr-D is computed in-process. SPICE and METEOR are external plugins:
//! an executable reads JSON lines `{"candidate": .., "references": [..]}`
//! on stdin and writes one `{"score": ..}` line per input on stdout.

mod cider;

pub use cider::{cider, ngram_counts, spider, spider_fl, NgramProfile, CIDER_SCALE, LENGTH_SIGMA, MAX_N};

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CaptionText, DatasetSplit};
use crate::error::{Error, Result};
use crate::fluency::FluencyDetector;
use crate::inference::{decode_clip, DecodeConfig, Decoded};
use crate::model::Captioner;
use crate::text_embed::TextEmbedder;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PluginSpec {
    pub name: String,
    pub command: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
}

#[derive(Serialize)]
struct PluginRequest<'a> {
    candidate: &'a str,
    references: Vec<&'a str>,
}

#[derive(Deserialize)]
struct PluginResponse {
    score: f64,
}

impl PluginSpec {
    /// Scores every `(candidate, references)` pair in one plugin invocation.
    pub fn score(&self, pairs: &[(&str, &[CaptionText])]) -> Result<Vec<f64>> {
        let fail = |message: String| Error::Plugin {
            name: self.name.clone(),
            message,
        };
        let mut input = Vec::new();
        for (cand, refs) in pairs {
            let req = PluginRequest {
                candidate: cand,
                references: refs.iter().map(CaptionText::as_str).collect(),
            };
            serde_json::to_writer(&mut input, &req)?;
            input.push(b'\n');
        }
        let mut child = Command::new(&self.command)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(format!("cannot run `{}`: {e}", self.command.display())))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(&input));
        let output = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
        writer
            .join()
            .expect("stdin writer thread")
            .map_err(|e| fail(format!("writing input: {e}")))?;
        if !output.status.success() {
            return Err(fail(format!(
                "exited with {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let text = String::from_utf8(output.stdout).map_err(|e| fail(e.to_string()))?;
        let scores = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str::<PluginResponse>(l)
                    .map(|r| r.score)
                    .map_err(|e| fail(format!("bad output line `{l}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if scores.len() != pairs.len() {
            return Err(fail(format!("returned {} scores for {} inputs", scores.len(), pairs.len())));
        }
        Ok(scores)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricOptions {
    pub spice: Option<PluginSpec>,
    pub meteor: Option<PluginSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMetrics {
    pub id: String,
    pub caption: String,
    pub fluent: bool,
    pub cider: f64,
    pub spice: Option<f64>,
    pub spider: Option<f64>,
    pub meteor: Option<f64>,
    /// SPIDEr-FL when SPICE is available, otherwise CIDEr with the same
    /// fluency penalty (see `MetricReport::fl_base`).
    pub fl_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetrics {
    pub items: usize,
    pub cider: f64,
    pub spice: Option<f64>,
    pub spider: Option<f64>,
    pub meteor: Option<f64>,
    pub spider_fl: Option<f64>,
    pub cider_fl: Option<f64>,
    pub fluent_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub aggregation: String,
    /// `"spider"` or `"cider"`: the score the fluency penalty was applied to.
    pub fl_base: String,
    pub config: serde_json::Value,
    pub corpus: CorpusMetrics,
    pub items: Vec<ItemMetrics>,
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// One generated caption with its references.
#[derive(Debug, Clone)]
pub struct ScoredItem {
    pub id: String,
    pub caption: String,
    pub fluent: bool,
    pub references: Vec<CaptionText>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Per-item metrics and their means. Document frequencies come from the
/// references of every item.
pub fn score_items(items: &[ScoredItem], options: &MetricOptions, config: serde_json::Value) -> Result<MetricReport> {
    if items.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let ref_sets: Vec<&[CaptionText]> = items.iter().map(|i| i.references.as_slice()).collect();
    let profile = NgramProfile::from_references(&ref_sets);
    let ciders: Vec<f64> = items
        .par_iter()
        .map(|i| cider(&i.caption, &i.references, &profile))
        .collect();
    let pairs: Vec<(&str, &[CaptionText])> = items.iter().map(|i| (i.caption.as_str(), i.references.as_slice())).collect();
    let spice = options.spice.as_ref().map(|p| p.score(&pairs)).transpose()?;
    let meteor = options.meteor.as_ref().map(|p| p.score(&pairs)).transpose()?;

    let rows: Vec<ItemMetrics> = items
        .iter()
        .enumerate()
        .map(|(k, item)| {
            let spice_k = spice.as_ref().map(|s| s[k]);
            let spider_k = spice_k.map(|s| spider(ciders[k], s));
            ItemMetrics {
                id: item.id.clone(),
                caption: item.caption.clone(),
                fluent: item.fluent,
                cider: ciders[k],
                spice: spice_k,
                spider: spider_k,
                meteor: meteor.as_ref().map(|m| m[k]),
                fl_score: spider_fl(spider_k.unwrap_or(ciders[k]), item.fluent),
            }
        })
        .collect();
    let has_spice = spice.is_some();
    let fl = mean(rows.iter().map(|r| r.fl_score));
    let corpus = CorpusMetrics {
        items: rows.len(),
        cider: mean(rows.iter().map(|r| r.cider)),
        spice: has_spice.then(|| mean(rows.iter().filter_map(|r| r.spice))),
        spider: has_spice.then(|| mean(rows.iter().filter_map(|r| r.spider))),
        meteor: meteor.as_ref().map(|_| mean(rows.iter().filter_map(|r| r.meteor))),
        spider_fl: has_spice.then_some(fl),
        cider_fl: (!has_spice).then_some(fl),
        fluent_fraction: mean(rows.iter().map(|r| f64::from(u8::from(r.fluent)))),
    };
    Ok(MetricReport {
        aggregation: "corpus values are means of per-item scores".into(),
        fl_base: if has_spice { "spider" } else { "cider" }.into(),
        config,
        corpus,
        items: rows,
    })
}

/// Captions every item of `split` with the configured decoding path and
/// scores the result.
pub fn evaluate_split(
    model: &Captioner,
    split: &DatasetSplit,
    decode: &DecodeConfig,
    embedder: &dyn TextEmbedder,
    detector: &dyn FluencyDetector,
    options: &MetricOptions,
) -> Result<(MetricReport, Vec<Decoded>)> {
    if split.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    let decoded: Vec<Decoded> = split
        .pairs()
        .par_iter()
        .enumerate()
        .map(|(k, pair)| {
            let features = model.features(pair.waveform())?;
            let encoded = model.encode(features.frames())?;
            decode_clip(model, &encoded, embedder, detector, decode, k as u64)
        })
        .collect::<Result<_>>()?;
    let items: Vec<ScoredItem> = split
        .pairs()
        .iter()
        .zip(&decoded)
        .map(|(pair, d)| ScoredItem {
            id: pair.id().to_owned(),
            caption: d.chosen.caption.as_str().to_owned(),
            fluent: d.chosen.fluent,
            references: pair.captions().to_vec(),
        })
        .collect();
    let config = serde_json::json!({
        "split": split.name().to_string(),
        "decode": decode,
        "metrics": options,
    });
    Ok((score_items(&items, options, config)?, decoded))
}
