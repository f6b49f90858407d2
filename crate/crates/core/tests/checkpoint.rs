mod common;

use aacap::checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
use aacap::model::{Captioner, ModelConfig};
use aacap::objectives::ContrastiveConfig;
use aacap::train::{train, TrainConfig};
use aacap::Error;

fn config(steps: usize) -> TrainConfig {
    TrainConfig {
        lr: Some(1e-3),
        batch_size: 4,
        epochs: steps,
        max_steps: Some(steps),
        seed: 5,
        ..Default::default()
    }
}

fn trained(steps: usize) -> Checkpoint {
    let split = common::synth(4, 1, 6);
    let mut model = common::tiny_model(&split, 5);
    let data = common::examples(&model, &split);
    let cfg = config(steps);
    let outcome = train(&mut model, &data, &data, &cfg, |_| {}).unwrap();
    Checkpoint::new(model, cfg, Some(outcome.optimizer), outcome.steps.len() as u64, Some(outcome.best_val_accuracy))
}

#[test]
fn save_load_save_is_byte_identical() {
    let ckpt = trained(2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.to_bytes().unwrap(), std::fs::read(&path).unwrap());
    assert_eq!(back.step, 2);
    assert_eq!(back.train_config, ckpt.train_config);
    assert_eq!(back.model.config, ckpt.model.config);
    assert_eq!(back.extractor_fingerprint(), ckpt.extractor_fingerprint());
    for id in ckpt.model.params.ids() {
        assert_eq!(back.model.params.get(id), ckpt.model.params.get(id));
    }
}

#[test]
fn unknown_version_and_bad_magic_are_rejected() {
    let mut bytes = trained(1).to_bytes().unwrap();
    bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    assert!(matches!(
        Checkpoint::read_from(&bytes[..]),
        Err(Error::VersionMismatch { found, expected }) if found == FORMAT_VERSION + 1 && expected == FORMAT_VERSION
    ));
    bytes[..8].copy_from_slice(b"NOTACKPT");
    assert!(matches!(Checkpoint::read_from(&bytes[..]), Err(Error::Checkpoint(_))));
    assert_ne!(&bytes[..8], MAGIC);
}

#[test]
fn frozen_extractor_survives_training() {
    let split = common::synth(4, 1, 6);
    let before = common::tiny_model(&split, 5).extractor.fingerprint();
    let after = trained(3).extractor_fingerprint();
    assert_eq!(before, after);
}

#[test]
fn resumed_model_starts_from_checkpoint_parameters() {
    let ckpt = trained(2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pre.ckpt");
    ckpt.save(&path).unwrap();
    let resumed = Checkpoint::load(&path).unwrap().model;
    let split = common::synth(4, 1, 6);
    let data = common::examples(&resumed, &split);
    let c = ContrastiveConfig::default();
    assert_eq!(resumed.batch_loss(&data, &c).unwrap().total, ckpt.model.batch_loss(&data, &c).unwrap().total);
}

#[test]
fn same_seed_and_config_give_identical_checkpoints() {
    let a = trained(1).to_bytes().unwrap();
    let b = trained(1).to_bytes().unwrap();
    assert_eq!(a, b);
}

#[test]
fn non_finite_loss_writes_snapshot_and_stops() {
    let split = common::synth(4, 1, 6);
    let mut model = common::tiny_model(&split, 5);
    let data = common::examples(&model, &split);
    let id = model.params.ids().next().unwrap();
    model.params.get_mut(id).fill(f64::NAN);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        snapshot_dir: Some(dir.path().to_path_buf()),
        ..config(3)
    };
    match train(&mut model, &data, &[], &cfg, |_| {}) {
        Err(Error::NonFiniteLoss { step, snapshot }) => {
            assert_eq!(step, 1);
            assert!(snapshot.starts_with(dir.path()));
            Checkpoint::load(&snapshot).unwrap();
        }
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}

#[test]
fn fresh_models_with_equal_seeds_match() {
    let split = common::synth(4, 1, 6);
    let tok = || aacap::data::build_vocabulary(&[&split], 1000).unwrap();
    let a = Captioner::new(ModelConfig::tiny(), tok(), &mut aacap::rng::stream(9, "init", 0)).unwrap();
    let b = Captioner::new(ModelConfig::tiny(), tok(), &mut aacap::rng::stream(9, "init", 0)).unwrap();
    let ca = Checkpoint::new(a, TrainConfig::default(), None, 0, None).to_bytes().unwrap();
    let cb = Checkpoint::new(b, TrainConfig::default(), None, 0, None).to_bytes().unwrap();
    assert_eq!(ca, cb);
}
