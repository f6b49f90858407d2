//! Mix-up augmentation: two clips summed at a sampled relative level, with
//! a caption describing both produced by a language model.
//!
//! Only `(source ids, gain)` is persisted per record; audio is re-mixed on
//! demand, and the padding offset is a pure function of those fields.

mod llm;

pub use llm::{
    fill_prompt, offline_merge, prompt_hash, request_caption_mixup, CacheEntry, LlmClient, LlmClientConfig,
    LlmMode, LlmResponse, ResponseCache, DEFAULT_KEY_ENV, DEFAULT_PROMPT,
};

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{rms, AudioCaptionPair, CaptionSource, CaptionText, DatasetSplit, Waveform};
use crate::error::{Error, Result};
use crate::fluency::FluencyDetector;
use crate::rng;

pub const MAX_GAIN_DB: f64 = 5.0;

/// Relative level of the second clip, uniform in dB over `[-5, 5]`.
pub fn sample_mix_gain(rng: &mut impl Rng) -> f64 {
    rng.gen_range(-MAX_GAIN_DB..=MAX_GAIN_DB)
}

/// Factor applied to the second clip: `(rms(x1) / rms(x2)) · 10^(gain_db / 20)`.
pub fn mix_scale(x1: &Waveform, x2: &Waveform, gain_db: f64) -> Result<f64> {
    if x1.sample_rate() != x2.sample_rate() {
        return Err(Error::invalid(format!(
            "sample rates differ: {} vs {}",
            x1.sample_rate(),
            x2.sample_rate()
        )));
    }
    let (r1, r2) = (x1.rms(), x2.rms());
    if r1 == 0.0 || r2 == 0.0 {
        return Err(Error::invalid("cannot mix a silent waveform"));
    }
    if !gain_db.is_finite() {
        return Err(Error::invalid("gain must be finite"));
    }
    Ok(r1 / r2 * 10f64.powf(gain_db / 20.0))
}

/// Where the shorter clip starts inside the longer one.
pub fn mix_offset(id1: &str, id2: &str, gain_db: f64, slack: usize) -> usize {
    if slack == 0 {
        return 0;
    }
    let key = format!("{id1}\u{0}{id2}");
    rng::stream(gain_db.to_bits(), &key, 0).gen_range(0..=slack)
}

/// `x1 + g·x2` with the shorter clip zero-padded, starting at `offset`
/// inside the longer one, then divided by the peak if it exceeds 1.
pub fn mix_waveforms_at(x1: &Waveform, x2: &Waveform, gain_db: f64, offset: usize) -> Result<Waveform> {
    let g = mix_scale(x1, x2, gain_db)?;
    let (a, b) = (x1.samples(), x2.samples());
    let len = a.len().max(b.len());
    if offset > len - a.len().min(b.len()) {
        return Err(Error::invalid("mix offset past the end of the longer clip"));
    }
    let mut out = vec![0.0; len];
    let (off1, off2) = if a.len() >= b.len() { (0, offset) } else { (offset, 0) };
    for (i, v) in a.iter().enumerate() {
        out[off1 + i] += v;
    }
    for (i, v) in b.iter().enumerate() {
        out[off2 + i] += g * v;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        for v in &mut out {
            *v /= peak;
        }
    }
    Waveform::new(out, x1.sample_rate())
}

/// Mixes two clips with the offset derived from their ids and the gain.
pub fn mix_waveforms(id1: &str, x1: &Waveform, id2: &str, x2: &Waveform, gain_db: f64) -> Result<Waveform> {
    let slack = x1.len().abs_diff(x2.len());
    mix_waveforms_at(x1, x2, gain_db, mix_offset(id1, id2, gain_db, slack))
}

/// `20·log10(rms(x1) / rms(g·x2))`, the achieved relative level of the
/// first clip over the scaled second one.
pub fn component_level_db(x1: &Waveform, x2: &Waveform, g: f64) -> f64 {
    20.0 * (x1.rms() / (g * rms(x2.samples()))).log10()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixupRecord {
    pub source_id_1: String,
    pub source_id_2: String,
    pub gain_db: f64,
    pub mixed_caption: String,
    pub provider: String,
    pub accepted: bool,
    pub prompt_hash: String,
}

impl MixupRecord {
    /// Re-creates the mixed waveform from the source split.
    pub fn mix(&self, split: &DatasetSplit) -> Result<Waveform> {
        let find = |id: &str| {
            split
                .get(id)
                .ok_or_else(|| Error::invalid(format!("mix-up source `{id}` is not in the split")))
        };
        let (p1, p2) = (find(&self.source_id_1)?, find(&self.source_id_2)?);
        mix_waveforms(&self.source_id_1, p1.waveform(), &self.source_id_2, p2.waveform(), self.gain_db)
    }
}

/// First line of a mix-up log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixupHeader {
    pub format: String,
    pub version: u32,
    pub split: String,
    pub seed: u64,
    pub requested: usize,
    pub provider: String,
    pub prompt_template: String,
}

pub const LOG_FORMAT: &str = "aacap-mixup";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MixupCorpus {
    pub header: MixupHeader,
    /// Every attempt in order, accepted or not.
    pub records: Vec<MixupRecord>,
    /// Set when the client failed before `requested` records were accepted.
    pub exhausted: Option<String>,
}

impl MixupCorpus {
    pub fn accepted(&self) -> impl Iterator<Item = &MixupRecord> {
        self.records.iter().filter(|r| r.accepted)
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted().count()
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header_line = lines.next().ok_or_else(|| Error::invalid("empty mix-up log"))??;
        let header: MixupHeader = serde_json::from_str(&header_line)?;
        if header.format != LOG_FORMAT || header.version != LOG_VERSION {
            return Err(Error::invalid(format!(
                "unsupported mix-up log {} v{}",
                header.format, header.version
            )));
        }
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(Self {
            header,
            records,
            exhausted: None,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }

    /// The source split extended with one pair per accepted record, audio
    /// mixed now from the stored ids and gains.
    pub fn augment(&self, split: &DatasetSplit) -> Result<DatasetSplit> {
        let mut pairs = split.pairs().to_vec();
        for (k, r) in self.records.iter().enumerate().filter(|(_, r)| r.accepted) {
            let wave = r.mix(split)?;
            let caption = CaptionText::new(&r.mixed_caption, CaptionSource::Mixup)?;
            pairs.push(AudioCaptionPair::new(format!("mixup-{k:06}"), wave, vec![caption])?);
        }
        DatasetSplit::new(split.name(), pairs)
    }
}

/// Attempt budget per requested record before giving up.
const MAX_ATTEMPTS_PER_RECORD: usize = 4;

/// Draws `n` accepted mix-ups from `split`. Each attempt picks two distinct
/// clips uniformly, one caption of each uniformly and a gain; the merged
/// caption is accepted when it is within the word limit and fluent.
pub fn build_mixup_corpus(
    split: &DatasetSplit,
    n: usize,
    client: &LlmClient,
    detector: &dyn FluencyDetector,
    seed: u64,
) -> Result<MixupCorpus> {
    if n > 0 && split.len() < 2 {
        return Err(Error::invalid("mix-up needs at least two clips"));
    }
    let header = MixupHeader {
        format: LOG_FORMAT.into(),
        version: LOG_VERSION,
        split: split.name().to_string(),
        seed,
        requested: n,
        provider: client.provider().to_string(),
        prompt_template: client.config().prompt_template.clone(),
    };
    let mut rng = rng::stream(seed, "mixup", 0);
    let mut records = Vec::new();
    let mut accepted = 0;
    let mut exhausted = None;
    let budget = n * MAX_ATTEMPTS_PER_RECORD;
    while accepted < n {
        if records.len() >= budget {
            exhausted = Some(format!("attempt budget of {budget} spent"));
            break;
        }
        let picks = sample(&mut rng, split.len(), 2);
        let (p1, p2) = (&split.pairs()[picks.index(0)], &split.pairs()[picks.index(1)]);
        let c1 = &p1.captions()[rng.gen_range(0..p1.captions().len())];
        let c2 = &p2.captions()[rng.gen_range(0..p2.captions().len())];
        let gain_db = sample_mix_gain(&mut rng);
        let resp = match client.complete(c1.as_str(), c2.as_str()) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("mix-up client stopped after {accepted} accepted records: {e}");
                exhausted = Some(e.to_string());
                break;
            }
        };
        let ok = match CaptionText::new(&resp.text, CaptionSource::Mixup) {
            Ok(c) => detector.is_fluent(c.as_str()),
            Err(_) => false,
        };
        let mixed_caption = if ok {
            crate::data::normalize_text(&resp.text)
        } else {
            resp.text.clone()
        };
        accepted += usize::from(ok);
        records.push(MixupRecord {
            source_id_1: p1.id().to_owned(),
            source_id_2: p2.id().to_owned(),
            gain_db,
            mixed_caption,
            provider: resp.provider,
            accepted: ok,
            prompt_hash: resp.prompt_hash,
        });
    }
    Ok(MixupCorpus {
        header,
        records,
        exhausted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 16_000).unwrap()
    }

    #[test]
    fn scale_factor_examples() {
        let a = wave(vec![0.2, -0.2, 0.2, -0.2]);
        let b = wave(vec![0.1, -0.1, 0.1, -0.1]);
        assert!((mix_scale(&a, &b, 0.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((mix_scale(&a, &a, 0.0).unwrap() - 1.0).abs() < 1e-12);
        let g5 = mix_scale(&a, &a, 5.0).unwrap();
        assert!((g5 - 10f64.powf(0.25)).abs() < 1e-12);
        assert!((g5 - 1.7783).abs() < 1e-4);
    }

    #[test]
    fn silent_and_mismatched_inputs_fail() {
        let a = wave(vec![0.1, 0.2]);
        assert!(mix_scale(&a, &wave(vec![0.0, 0.0]), 0.0).is_err());
        let other = Waveform::new(vec![0.1, 0.2], 8_000).unwrap();
        assert!(mix_scale(&a, &other, 0.0).is_err());
    }

    #[test]
    fn padding_places_shorter_clip_at_offset() {
        let long = wave(vec![0.1; 6]);
        let short = wave(vec![0.1, 0.1]);
        let m = mix_waveforms_at(&long, &short, 0.0, 3).unwrap();
        let expect = [0.1, 0.1, 0.1, 0.2, 0.2, 0.1];
        for (g, e) in m.samples().iter().zip(expect) {
            assert!((g - e).abs() < 1e-12);
        }
        assert!(mix_waveforms_at(&long, &short, 0.0, 5).is_err());
    }

    #[test]
    fn loud_mixes_are_peak_rescaled() {
        let a = wave(vec![0.9, -0.9]);
        let m = mix_waveforms_at(&a, &a, 0.0, 0).unwrap();
        assert!((m.samples()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gain_support_and_mean() {
        let mut r = rng::seeded(11);
        let draws: Vec<f64> = (0..10_000).map(|_| sample_mix_gain(&mut r)).collect();
        assert!(draws.iter().all(|g| (-5.0..=5.0).contains(g)));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 0.2, "{mean}");
    }
}
