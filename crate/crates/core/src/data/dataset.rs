use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{wav, CaptionSource, CaptionText, Waveform};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AudioCaptionPair {
    id: String,
    waveform: Arc<Waveform>,
    captions: Vec<CaptionText>,
}

impl AudioCaptionPair {
    pub fn new(id: impl Into<String>, waveform: Waveform, captions: Vec<CaptionText>) -> Result<Self> {
        let id = id.into();
        if captions.is_empty() {
            return Err(Error::invalid(format!("pair `{id}` has no captions")));
        }
        Ok(Self {
            id,
            waveform: Arc::new(waveform),
            captions,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn waveform(&self) -> &Waveform {
        &self.waveform
    }

    pub fn captions(&self) -> &[CaptionText] {
        &self.captions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Evaluation,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Evaluation => "evaluation",
        })
    }
}

/// An immutable, id-ordered collection of pairs with unique ids.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    name: SplitName,
    pairs: Vec<AudioCaptionPair>,
}

impl DatasetSplit {
    /// Sorts by id and rejects duplicate ids.
    pub fn new(name: SplitName, mut pairs: Vec<AudioCaptionPair>) -> Result<Self> {
        pairs.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = pairs.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::invalid(format!(
                "duplicate pair id `{}` in {name} split",
                w[0].id
            )));
        }
        Ok(Self { name, pairs })
    }

    pub fn name(&self) -> SplitName {
        self.name
    }

    pub fn pairs(&self) -> &[AudioCaptionPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&AudioCaptionPair> {
        self.pairs
            .binary_search_by(|p| p.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.pairs[i])
    }
}

/// Fails if any pair id appears in more than one split.
pub fn check_disjoint(splits: &[&DatasetSplit]) -> Result<()> {
    let mut seen: HashSet<&str> = HashSet::new();
    for split in splits {
        for pair in split.pairs() {
            if !seen.insert(pair.id()) {
                return Err(Error::invalid(format!(
                    "pair id `{}` appears in more than one split",
                    pair.id()
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Drop captions with fewer words than this; pairs left without captions are skipped.
    pub min_caption_words: Option<usize>,
}

struct ManifestRow {
    line: u64,
    id: String,
    audio: PathBuf,
    captions: Vec<CaptionText>,
}

fn parse_manifest(root: &Path, manifest: &Path, options: &LoadOptions) -> Result<Vec<ManifestRow>> {
    let file = std::fs::File::open(manifest).map_err(|e| Error::io(manifest, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Manifest {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(id_col), Some(path_col)) = (col("id"), col("audio_path")) else {
        return Err(Error::Manifest {
            line: 1,
            message: "header must contain `id` and `audio_path` columns".into(),
        });
    };
    let caption_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.trim().starts_with("caption_"))
        .map(|(i, _)| i)
        .collect();

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Manifest {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).map(str::trim).unwrap_or("");
        let id = field(id_col);
        let audio = field(path_col);
        if id.is_empty() || audio.is_empty() {
            return Err(Error::Manifest {
                line,
                message: "row is missing `id` or `audio_path`".into(),
            });
        }
        let mut captions = Vec::new();
        for &c in &caption_cols {
            let text = field(c);
            if text.is_empty() {
                continue;
            }
            let caption = CaptionText::new(text, CaptionSource::Human).map_err(|e| Error::Manifest {
                line,
                message: e.to_string(),
            })?;
            if options
                .min_caption_words
                .is_some_and(|min| caption.word_count() < min)
            {
                continue;
            }
            captions.push(caption);
        }
        if captions.is_empty() && options.min_caption_words.is_none() {
            return Err(Error::Manifest {
                line,
                message: format!("row `{id}` has no captions"),
            });
        }
        rows.push(ManifestRow {
            line,
            id: id.to_string(),
            audio: root.join(audio),
            captions,
        });
    }
    Ok(rows)
}

/// Loads a CSV manifest (`id, audio_path, caption_1..caption_k`) whose audio
/// paths are relative to `root`. Audio is down-mixed and resampled to 16 kHz.
pub fn load_dataset(
    root: &Path,
    manifest: &Path,
    name: SplitName,
    options: &LoadOptions,
) -> Result<DatasetSplit> {
    let rows = parse_manifest(root, manifest, options)?;
    for row in &rows {
        if !row.audio.is_file() {
            return Err(Error::MissingAudio {
                row: row.id.clone(),
                path: row.audio.clone(),
            });
        }
    }
    let loaded: Vec<Option<AudioCaptionPair>> = rows
        .into_par_iter()
        .map(|row| -> Result<Option<AudioCaptionPair>> {
            if row.captions.is_empty() {
                log::warn!(
                    "manifest line {}: `{}` has no captions left after filtering; skipped",
                    row.line,
                    row.id
                );
                return Ok(None);
            }
            let waveform = wav::load_waveform(&row.audio)?;
            if waveform.is_empty() {
                log::warn!(
                    "manifest line {}: `{}` has zero-length audio; skipped",
                    row.line,
                    row.id
                );
                return Ok(None);
            }
            Ok(Some(AudioCaptionPair::new(row.id, waveform, row.captions)?))
        })
        .collect::<Result<_>>()?;
    DatasetSplit::new(name, loaded.into_iter().flatten().collect())
}
