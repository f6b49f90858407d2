//! Synthetic audio-caption corpora: clips built from one or two tonal sound
//! events with templated captions. Used by tests, examples and desk-scale
//! experiments.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::wav::write_wav;
use crate::data::{AudioCaptionPair, CaptionText, DatasetSplit, SplitName, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy)]
pub struct SoundClass {
    pub subject: &'static str,
    pub verbs: [&'static str; 2],
    pub partials: &'static [f64],
    /// Amplitude-modulation rate in Hz; 0 for a steady tone.
    pub pulse_hz: f64,
}

pub const CLASSES: [SoundClass; 8] = [
    SoundClass { subject: "a dog", verbs: ["barks", "is barking"], partials: &[450.0, 900.0], pulse_hz: 3.0 },
    SoundClass { subject: "a bird", verbs: ["chirps", "is singing"], partials: &[2800.0, 3400.0], pulse_hz: 8.0 },
    SoundClass { subject: "an engine", verbs: ["hums", "is running"], partials: &[110.0, 220.0, 330.0], pulse_hz: 0.0 },
    SoundClass { subject: "a bell", verbs: ["rings", "is ringing"], partials: &[880.0, 1320.0], pulse_hz: 1.0 },
    SoundClass { subject: "a siren", verbs: ["wails", "is blaring"], partials: &[700.0, 1050.0], pulse_hz: 0.5 },
    SoundClass { subject: "water", verbs: ["flows", "is trickling"], partials: &[1500.0, 1700.0, 1900.0], pulse_hz: 13.0 },
    SoundClass { subject: "a clock", verbs: ["ticks", "is ticking"], partials: &[4000.0], pulse_hz: 4.0 },
    SoundClass { subject: "a car horn", verbs: ["honks", "is honking"], partials: &[400.0, 500.0], pulse_hz: 2.0 },
];

const CONNECTIVES: [&str; 3] = ["while", "and", "as"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub num_clips: usize,
    pub duration_secs: f64,
    /// References per clip.
    pub captions_per_clip: usize,
    /// Allow two-event clips.
    pub mixtures: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_clips: 64,
            duration_secs: 1.0,
            captions_per_clip: 3,
            mixtures: true,
            seed: 0,
        }
    }
}

/// Class indices of every event combination, singles first.
fn combinations(mixtures: bool) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = (0..CLASSES.len()).map(|i| vec![i]).collect();
    if mixtures {
        for i in 0..CLASSES.len() {
            for j in 0..CLASSES.len() {
                if i != j {
                    out.push(vec![i, j]);
                }
            }
        }
    }
    out
}

fn event_signal(class: &SoundClass, len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let detune = rng.gen_range(0.97..1.03);
    let phases: Vec<f64> = class.partials.iter().map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let pulse_phase = rng.gen_range(0.0..2.0 * PI);
    let sr = SAMPLE_RATE as f64;
    (0..len)
        .map(|n| {
            let t = n as f64 / sr;
            let tone: f64 = class
                .partials
                .iter()
                .zip(&phases)
                .enumerate()
                .map(|(k, (f, p))| (2.0 * PI * f * detune * t + p).sin() / (k + 1) as f64)
                .sum();
            let env = if class.pulse_hz > 0.0 {
                0.5 * (1.0 + (2.0 * PI * class.pulse_hz * t + pulse_phase).sin())
            } else {
                1.0
            };
            tone * env
        })
        .collect()
}

/// Audio for a combination of classes, peak-normalized to 0.5.
pub fn render(combo: &[usize], duration_secs: f64, rng: &mut impl Rng) -> Result<Waveform> {
    let len = (duration_secs * SAMPLE_RATE as f64).round() as usize;
    let mut out = vec![0.0; len];
    for &c in combo {
        let level = rng.gen_range(0.6..1.0);
        for (o, v) in out.iter_mut().zip(event_signal(&CLASSES[c], len, rng)) {
            *o += level * v;
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    Waveform::new(out, SAMPLE_RATE)
}

/// Caption for a combination; `variant` picks verb forms and the connective.
pub fn caption(combo: &[usize], variant: usize) -> String {
    let clause = |c: usize, v: usize| format!("{} {}", CLASSES[c].subject, CLASSES[c].verbs[v % 2]);
    match combo {
        [a] => clause(*a, variant),
        [a, b] => format!(
            "{} {} {}",
            clause(*a, variant),
            CONNECTIVES[(variant / 2) % CONNECTIVES.len()],
            clause(*b, variant / 2 + variant)
        ),
        _ => unreachable!("clips hold one or two events"),
    }
}

/// A split of `num_clips` clips. Event combinations are drawn in a seeded
/// order, cycling once every combination has been used.
pub fn synth_split(name: SplitName, config: &SynthConfig, id_prefix: &str) -> Result<DatasetSplit> {
    if config.captions_per_clip == 0 {
        return Err(Error::invalid("captions_per_clip must be >= 1"));
    }
    let mut order_rng = rng::stream(config.seed, "synth-order", 0);
    let mut combos = combinations(config.mixtures);
    combos.shuffle(&mut order_rng);
    let pairs = (0..config.num_clips)
        .map(|k| {
            let combo = &combos[k % combos.len()];
            let mut r = rng::stream(config.seed, "synth-clip", k as u64);
            let wave = render(combo, config.duration_secs, &mut r)?;
            let first = r.gen_range(0..4);
            let captions = (0..config.captions_per_clip)
                .map(|j| CaptionText::human(&caption(combo, first + j)))
                .collect::<Result<Vec<_>>>()?;
            AudioCaptionPair::new(format!("{id_prefix}{k:04}"), wave, captions)
        })
        .collect::<Result<Vec<_>>>()?;
    DatasetSplit::new(name, pairs)
}

/// Writes each clip as 16-bit WAV plus a `manifest.csv` (`id,audio_path,caption_1..`).
pub fn write_corpus(split: &DatasetSplit, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let max_caps = split.pairs().iter().map(|p| p.captions().len()).max().unwrap_or(1);
    let manifest = dir.join("manifest.csv");
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_path(&manifest)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let mut header = vec!["id".to_string(), "audio_path".to_string()];
    header.extend((1..=max_caps).map(|i| format!("caption_{i}")));
    w.write_record(&header).map_err(|e| Error::invalid(e.to_string()))?;
    for p in split.pairs() {
        let file = format!("{}.wav", p.id());
        write_wav(&dir.join(&file), p.waveform().samples(), p.waveform().sample_rate())?;
        let mut row = vec![p.id().to_string(), file];
        row.extend(p.captions().iter().map(|c| c.as_str().to_string()));
        w.write_record(&row).map_err(|e| Error::invalid(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}
