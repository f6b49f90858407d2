//! Audio front end: a stereo 44.1 kHz file loaded as 16 kHz mono, log-mel
//! frames, the frozen extractor, the downsampler and the encoder.
//!
//! cargo run --release -p aacap --example features

use std::f64::consts::PI;

use aacap::data::wav::{load_waveform, write_wav_channels};
use aacap::encoder::{AudioEncoder, EncoderConfig, FrozenExtractor, LogMel, MelConfig};
use aacap::model::ModelConfig;
use aacap::rng;
use aacap_autodiff::ParamStore;

fn main() -> aacap::Result<()> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("tone.wav");
    let rate = 44_100;
    let tone = |f: f64, amp: f64| (0..rate).map(|i| amp * (2.0 * PI * f * i as f64 / rate as f64).sin()).collect();
    write_wav_channels(&path, &[tone(440.0, 0.5), tone(1000.0, 0.3)], rate as u32)?;

    let wave = load_waveform(&path)?;
    println!("loaded {} samples at {} Hz ({:.3} s)", wave.len(), wave.sample_rate(), wave.duration_secs());

    let mel = LogMel::new(MelConfig::default());
    let frames = mel.compute(&wave)?;
    println!("log-mel: {} frames x {} bins", frames.nrows(), frames.ncols());
    let loudest = |row: usize| {
        let r = frames.row(row);
        (0..r.len()).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap_or(0)
    };
    println!("loudest mel bin in the middle frame: {}", loudest(frames.nrows() / 2));

    let cfg: EncoderConfig = ModelConfig::tiny().encoder;
    let extractor = FrozenExtractor::new(cfg.mel, cfg.extractor_dim, 0);
    let features = extractor.extract(&wave)?;
    println!(
        "extractor: {} frames x {} dims at {} frames/s, fingerprint {}",
        features.len(),
        features.dim(),
        features.frame_rate(),
        &extractor.fingerprint()[..12]
    );

    let mut store = ParamStore::new();
    let encoder = AudioEncoder::new(&mut store, cfg, &mut rng::seeded(0))?;
    let (memory, embedding) = encoder.run(&store, &features)?;
    println!(
        "encoder: {} frames x {} dims at {:.2} frames/s; pooled embedding of width {}",
        memory.len(),
        memory.dim(),
        memory.frame_rate(),
        embedding.dim()
    );
    Ok(())
}
