//! Log-mel front end and the frozen convolutional feature extractor.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use aacap_autodiff::{Mat, Tape};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::nn::xavier;

/// Time-major frame matrix with its frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: Mat,
    frame_rate: f64,
}

impl FeatureSequence {
    pub fn new(frames: Mat, frame_rate: f64) -> Result<Self> {
        if frames.nrows() == 0 || frames.ncols() == 0 {
            return Err(Error::invalid("feature sequence needs at least one frame"));
        }
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(Error::invalid("frame rate must be positive"));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature sequence contains non-finite values"));
        }
        Ok(Self { frames, frame_rate })
    }

    pub fn frames(&self) -> &Mat {
        &self.frames
    }

    pub fn into_frames(self) -> Mat {
        self.frames
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    const MAGIC: &'static [u8; 8] = b"AACFEAT1";

    /// Binary layout: magic, `u32` T, `u32` D, `f64` frame rate, then T·D
    /// little-endian `f32` values in row-major order.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_u32::<LittleEndian>(self.len() as u32)?;
        w.write_u32::<LittleEndian>(self.dim() as u32)?;
        w.write_f64::<LittleEndian>(self.frame_rate)?;
        for v in self.frames.iter() {
            w.write_f32::<LittleEndian>(*v as f32)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::invalid("not a precomputed feature file"));
        }
        let t = r.read_u32::<LittleEndian>()? as usize;
        let d = r.read_u32::<LittleEndian>()? as usize;
        let frame_rate = r.read_f64::<LittleEndian>()?;
        let mut data = Vec::with_capacity(t * d);
        for _ in 0..t * d {
            data.push(r.read_f32::<LittleEndian>()? as f64);
        }
        let frames = Array2::from_shape_vec((t, d), data)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(frames, frame_rate)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub n_fft: usize,
    pub win_length: usize,
    /// 10 ms at 16 kHz.
    pub hop_length: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_fft: 512,
            win_length: 400,
            hop_length: 160,
            n_mels: 40,
            f_min: 0.0,
            f_max: SAMPLE_RATE as f64 / 2.0,
        }
    }
}

/// Power floor applied before the logarithm.
pub const POWER_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-style mel filters over the `n_fft / 2 + 1` power bins.
pub fn mel_filterbank(cfg: &MelConfig, sample_rate: u32) -> Mat {
    let n_bins = cfg.n_fft / 2 + 1;
    let mel_lo = hz_to_mel(cfg.f_min);
    let mel_hi = hz_to_mel(cfg.f_max);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / cfg.n_fft as f64;
    Array2::from_shape_fn((cfg.n_mels, n_bins), |(m, k)| {
        let f = k as f64 * bin_hz;
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        if f <= lo || f >= hi {
            0.0
        } else if f <= center {
            (f - lo) / (center - lo)
        } else {
            (hi - f) / (hi - center)
        }
    })
}

/// Log-mel spectrogram computer with a cached FFT plan.
#[derive(Clone)]
pub struct LogMel {
    cfg: MelConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filters: Mat,
}

impl std::fmt::Debug for LogMel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMel").field("cfg", &self.cfg).finish()
    }
}

impl LogMel {
    pub fn new(cfg: MelConfig) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        let window = (0..cfg.win_length)
            .map(|i| {
                0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / cfg.win_length as f64).cos()
            })
            .collect();
        let filters = mel_filterbank(&cfg, SAMPLE_RATE);
        Self {
            cfg,
            fft,
            window,
            filters,
        }
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    /// Power spectrum frames (`T × (n_fft/2 + 1)`), one per hop, zero-padded at the end.
    pub fn power_spectrogram(&self, waveform: &Waveform) -> Result<Mat> {
        if waveform.sample_rate() != SAMPLE_RATE {
            return Err(Error::invalid(format!(
                "feature extraction expects {SAMPLE_RATE} Hz audio, got {}",
                waveform.sample_rate()
            )));
        }
        let samples = waveform.samples();
        let hop = self.cfg.hop_length;
        if samples.len() < hop {
            return Err(Error::invalid(format!(
                "waveform of {} samples is shorter than one hop ({hop})",
                samples.len()
            )));
        }
        let n_frames = samples.len() / hop;
        let n_bins = self.cfg.n_fft / 2 + 1;
        let mut out = Array2::zeros((n_frames, n_bins));
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.n_fft];
        for t in 0..n_frames {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (i, w) in self.window.iter().enumerate() {
                if let Some(&s) = samples.get(t * hop + i) {
                    buf[i] = Complex::new(s * w, 0.0);
                }
            }
            self.fft.process(&mut buf);
            for k in 0..n_bins {
                out[[t, k]] = buf[k].norm_sqr();
            }
        }
        Ok(out)
    }

    /// Natural-log mel energies (`T × n_mels`) with the power floored at [`POWER_FLOOR`].
    pub fn compute(&self, waveform: &Waveform) -> Result<Mat> {
        let power = self.power_spectrogram(waveform)?;
        Ok(power
            .dot(&self.filters.t())
            .mapv(|e| e.max(POWER_FLOOR).ln()))
    }
}

// Fixed affine map that brings log-mel values (floor ln 1e-10 ≈ -23) near unit scale.
const LOG_MEL_OFFSET: f64 = 8.0;
const LOG_MEL_SCALE: f64 = 8.0;

/// Log-mel front end followed by two time convolutions (stride 1, then 2),
/// giving 50 frames per second. Its weights are fixed at construction and
/// never trained.
#[derive(Debug, Clone)]
pub struct FrozenExtractor {
    mel: LogMel,
    conv1_w: Mat,
    conv1_b: Mat,
    conv2_w: Mat,
    conv2_b: Mat,
    out_dim: usize,
}

const CONV_KERNEL: usize = 3;

impl FrozenExtractor {
    pub fn new(mel_cfg: MelConfig, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_mels = mel_cfg.n_mels;
        Self {
            mel: LogMel::new(mel_cfg),
            conv1_w: xavier(CONV_KERNEL * n_mels, out_dim, &mut rng),
            conv1_b: Mat::zeros((1, out_dim)),
            conv2_w: xavier(CONV_KERNEL * out_dim, out_dim, &mut rng),
            conv2_b: Mat::zeros((1, out_dim)),
            out_dim,
        }
    }

    /// Builds an extractor from explicit weights (`3·n_mels × D`, `3·D × D`).
    pub fn from_weights(mel_cfg: MelConfig, conv1: Mat, conv2: Mat) -> Result<Self> {
        let out_dim = conv1.ncols();
        if conv1.nrows() != CONV_KERNEL * mel_cfg.n_mels
            || conv2.dim() != (CONV_KERNEL * out_dim, out_dim)
        {
            return Err(Error::invalid("extractor weight shapes do not match the mel config"));
        }
        Ok(Self {
            mel: LogMel::new(mel_cfg),
            conv1_w: conv1,
            conv1_b: Mat::zeros((1, out_dim)),
            conv2_w: conv2,
            conv2_b: Mat::zeros((1, out_dim)),
            out_dim,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn log_mel(&self) -> &LogMel {
        &self.mel
    }

    pub fn frame_rate(&self) -> f64 {
        SAMPLE_RATE as f64 / self.mel.cfg.hop_length as f64 / 2.0
    }

    pub fn extract(&self, waveform: &Waveform) -> Result<FeatureSequence> {
        let logmel = self
            .mel
            .compute(waveform)?
            .mapv(|v| (v + LOG_MEL_OFFSET) / LOG_MEL_SCALE);
        let mut t = Tape::new();
        let x = t.constant(logmel);
        let w1 = t.constant(self.conv1_w.clone());
        let b1 = t.constant(self.conv1_b.clone());
        let w2 = t.constant(self.conv2_w.clone());
        let b2 = t.constant(self.conv2_b.clone());
        let cols = t.unfold_time(x, CONV_KERNEL, 1, 1);
        let h = t.matmul(cols, w1);
        let h = t.add_row(h, b1);
        let h = t.gelu(h);
        let cols = t.unfold_time(h, CONV_KERNEL, 2, 1);
        let y = t.matmul(cols, w2);
        let y = t.add_row(y, b2);
        FeatureSequence::new(t.value(y).clone(), self.frame_rate())
    }

    /// SHA-256 over the frozen weights and front-end configuration.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let cfg = serde_json::to_string(&self.mel.cfg).expect("mel config serializes");
        h.update(cfg.as_bytes());
        for m in [&self.conv1_w, &self.conv1_b, &self.conv2_w, &self.conv2_b] {
            h.update((m.nrows() as u64).to_le_bytes());
            h.update((m.ncols() as u64).to_le_bytes());
            for v in m.iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex_string(&h.finalize())
    }

    pub(crate) fn weights(&self) -> [&Mat; 2] {
        [&self.conv1_w, &self.conv2_w]
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, secs: f64, amp: f64) -> Waveform {
        let n = (secs * SAMPLE_RATE as f64) as usize;
        Waveform::new(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
                .collect(),
            SAMPLE_RATE,
        )
        .unwrap()
    }

    #[test]
    fn one_second_gives_fifty_frames() {
        let ex = FrozenExtractor::new(MelConfig::default(), 32, 0);
        let f = ex.extract(&sine(440.0, 1.0, 0.5)).unwrap();
        assert!((f.len() as i64 - 50).abs() <= 1, "{} frames", f.len());
        assert_eq!(f.frame_rate(), 50.0);
        assert_eq!(f.dim(), 32);
    }

    #[test]
    fn silence_is_finite() {
        let ex = FrozenExtractor::new(MelConfig::default(), 16, 0);
        let zeros = Waveform::new(vec![0.0; 16_000], SAMPLE_RATE).unwrap();
        let f = ex.extract(&zeros).unwrap();
        assert!(f.frames().iter().all(|v| v.is_finite()));
        let lm = ex.log_mel().compute(&zeros).unwrap();
        assert!(lm.iter().all(|&v| (v - POWER_FLOOR.ln()).abs() < 1e-12));
    }

    #[test]
    fn shorter_than_one_hop_is_an_error() {
        let ex = FrozenExtractor::new(MelConfig::default(), 16, 0);
        let short = Waveform::new(vec![0.1; 159], SAMPLE_RATE).unwrap();
        assert!(ex.extract(&short).is_err());
        let one_hop = Waveform::new(vec![0.1; 160], SAMPLE_RATE).unwrap();
        assert_eq!(ex.extract(&one_hop).unwrap().len(), 1);
    }

    /// Oracle: evaluate each triangular filter directly at the tone frequency.
    fn filter_peak_for(freq: f64, cfg: &MelConfig) -> usize {
        let lo = hz_to_mel(cfg.f_min);
        let hi = hz_to_mel(cfg.f_max);
        let step = (hi - lo) / (cfg.n_mels + 1) as f64;
        let m = hz_to_mel(freq);
        (0..cfg.n_mels)
            .max_by(|&a, &b| {
                let resp = |i: usize| {
                    let c = lo + step * (i + 1) as f64;
                    (1.0 - (m - c).abs() / step).max(0.0)
                };
                resp(a).partial_cmp(&resp(b)).unwrap()
            })
            .unwrap()
    }

    #[test]
    fn tone_lands_in_its_mel_bin() {
        let cfg = MelConfig::default();
        let lm = LogMel::new(cfg);
        let mut peaks = Vec::new();
        for freq in [1000.0, 4000.0] {
            let spec = lm.compute(&sine(freq, 0.5, 0.5)).unwrap();
            let mean = spec.mean_axis(ndarray::Axis(0)).unwrap();
            let argmax = mean
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert!(
                (argmax as i64 - filter_peak_for(freq, &cfg) as i64).abs() <= 1,
                "{freq} Hz: argmax {argmax}, oracle {}",
                filter_peak_for(freq, &cfg)
            );
            peaks.push(argmax);
        }
        assert_ne!(peaks[0], peaks[1]);
    }

    #[test]
    fn feature_file_round_trip() {
        let f = FeatureSequence::new(
            Array2::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f64 * 0.5),
            50.0,
        )
        .unwrap();
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 4 + 8 + 6 * 4);
        assert_eq!(FeatureSequence::read_from(&buf[..]).unwrap(), f);
    }

    #[test]
    fn fingerprint_depends_on_weights() {
        let a = FrozenExtractor::new(MelConfig::default(), 8, 1);
        let b = FrozenExtractor::new(MelConfig::default(), 8, 2);
        assert_eq!(a.fingerprint(), FrozenExtractor::new(MelConfig::default(), 8, 1).fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
