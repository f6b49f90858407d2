//! RIFF/WAVE PCM input and output, down-mixing and resampling.

use std::f64::consts::PI;
use std::path::Path;

use super::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Interleaved integer PCM decoded to `[-1, 1]` floats.
#[derive(Debug, Clone)]
pub struct RawAudio {
    pub channels: u16,
    pub sample_rate: u32,
    /// One vector per channel.
    pub channel_data: Vec<Vec<f64>>,
}

pub fn read_wav(path: &Path) -> Result<RawAudio> {
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            message: "only integer PCM is supported".into(),
        });
    }
    let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
    let channels = spec.channels.max(1);
    let mut channel_data = vec![Vec::new(); channels as usize];
    for (i, s) in reader.into_samples::<i32>().enumerate() {
        let s = s.map_err(wav_err)?;
        channel_data[i % channels as usize].push(s as f64 / scale);
    }
    Ok(RawAudio {
        channels,
        sample_rate: spec.sample_rate,
        channel_data,
    })
}

/// Writes 16-bit mono PCM; samples are clamped to `[-1, 1]`.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    write_wav_channels(path, &[samples.to_vec()], sample_rate)
}

pub fn write_wav_channels(path: &Path, channels: &[Vec<f64>], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    let frames = channels.iter().map(Vec::len).max().unwrap_or(0);
    for i in 0..frames {
        for ch in channels {
            let v = ch.get(i).copied().unwrap_or(0.0).clamp(-1.0, 1.0);
            writer
                .write_sample((v * 32767.0).round() as i16)
                .map_err(to_err)?;
        }
    }
    writer.finalize().map_err(to_err)
}

/// Averages all channels.
pub fn downmix(raw: &RawAudio) -> Vec<f64> {
    let frames = raw.channel_data.iter().map(Vec::len).min().unwrap_or(0);
    let n = raw.channel_data.len() as f64;
    (0..frames)
        .map(|i| raw.channel_data.iter().map(|c| c[i]).sum::<f64>() / n)
        .collect()
}

const ZERO_CROSSINGS: f64 = 16.0;

/// Band-limited resampling with a Hann-windowed sinc kernel.
///
/// Output length is `round(len * to / from)`. When downsampling, the kernel
/// cutoff sits slightly below the output Nyquist frequency.
pub fn resample(samples: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let ratio = to as f64 / from as f64;
    let out_len = (samples.len() as f64 * ratio).round() as usize;
    let cutoff = if ratio < 1.0 { 0.97 * ratio } else { 1.0 };
    let half_width = ZERO_CROSSINGS / cutoff;
    (0..out_len)
        .map(|m| {
            let center = m as f64 / ratio;
            let lo = (center - half_width).ceil().max(0.0) as usize;
            let hi = ((center + half_width).floor() as usize).min(samples.len() - 1);
            let mut acc = 0.0;
            for (k, &x) in samples.iter().enumerate().take(hi + 1).skip(lo) {
                let d = center - k as f64;
                let window = 0.5 * (1.0 + (PI * d / half_width).cos());
                acc += x * cutoff * sinc(cutoff * d) * window;
            }
            acc
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Reads any supported WAVE file as a 16 kHz mono waveform.
pub fn load_waveform(path: &Path) -> Result<Waveform> {
    let raw = read_wav(path)?;
    let mono = downmix(&raw);
    let resampled = resample(&mono, raw.sample_rate, SAMPLE_RATE);
    let clamped = resampled.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    Waveform::new(clamped, SAMPLE_RATE)
}
