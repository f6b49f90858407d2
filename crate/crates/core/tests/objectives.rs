mod common;

use aacap::data::{BOS, EOS, PAD};
use aacap::decoder::{nll_loss, nll_on_tape, CaptionDecoder, DecoderConfig};
use aacap::encoder::ConformerBlock;
use aacap::nn::Graph;
use aacap::objectives::{infonce_loss, infonce_loss_with_grads, multitask_loss, ContrastiveConfig};
use aacap::rng;
use aacap::train::{train, TrainConfig};
use aacap_autodiff::gradcheck::{central_difference, relative_error};
use aacap_autodiff::{Mat, ParamStore};
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut r = rng::seeded(seed);
    Array2::from_shape_fn((rows, cols), |_| r.gen_range(-1.0..1.0))
}

/// Symmetric InfoNCE written out term by term.
fn infonce_reference(a: &Mat, c: &Mat, tau: f64) -> f64 {
    let b = a.nrows();
    let cos = |i: usize, j: usize| {
        let (x, y) = (a.row(i), c.row(j));
        x.dot(&y) / (x.dot(&x).sqrt() * y.dot(&y).sqrt())
    };
    let s = |i: usize, j: usize| (cos(i, j) / tau).exp();
    let mut audio_term = 0.0;
    let mut text_term = 0.0;
    for i in 0..b {
        let over_audio: f64 = (0..b).map(|k| s(k, i)).sum();
        let over_text: f64 = (0..b).map(|k| s(i, k)).sum();
        audio_term += (s(i, i) / over_audio).ln();
        text_term += (s(i, i) / over_text).ln();
    }
    -(audio_term + text_term) / (2.0 * b as f64)
}

#[test]
fn infonce_closed_form_cases() {
    let eye = array![[1.0, 0.0], [0.0, 1.0]];
    let swapped = array![[0.0, 1.0], [1.0, 0.0]];
    let aligned = infonce_loss(&eye, &eye, 0.5).unwrap();
    let misaligned = infonce_loss(&eye, &swapped, 0.5).unwrap();
    assert!((aligned - (1.0 + (-2f64).exp()).ln()).abs() < 1e-12);
    assert!((aligned - 0.12693).abs() < 1e-5);
    assert!((misaligned - 2.12693).abs() < 1e-5);
    assert_eq!(infonce_loss(&array![[3.0, -1.0]], &array![[0.5, 0.5]], 0.07).unwrap(), 0.0);
}

#[test]
fn infonce_matches_written_out_formula() {
    for (seed, tau) in [(1, 0.5), (2, 0.07), (3, 1.0)] {
        let a = random(4, 6, seed);
        let c = random(4, 6, seed + 100);
        let got = infonce_loss(&a, &c, tau).unwrap();
        assert!((got - infonce_reference(&a, &c, tau)).abs() < 1e-10, "tau {tau}");
    }
}

#[test]
fn infonce_gradient_check_both_batches() {
    for (seed, tau) in [(5, 0.5), (6, 0.1)] {
        let a = random(3, 5, seed);
        let c = random(3, 5, seed + 50);
        let (_, ga, gc) = infonce_loss_with_grads(&a, &c, tau).unwrap();
        let na = central_difference(|x| infonce_loss(x, &c, tau).unwrap(), &a, H);
        let nc = central_difference(|x| infonce_loss(&a, x, tau).unwrap(), &c, H);
        assert!(relative_error(&ga, &na) < TOL, "audio side, tau {tau}");
        assert!(relative_error(&gc, &nc) < TOL, "text side, tau {tau}");
    }
}

/// Compares every parameter gradient of `loss` with finite differences.
fn check_params(store: &ParamStore, analytic: &[(aacap_autodiff::ParamId, Mat)], loss: impl Fn(&ParamStore) -> f64) {
    assert!(!analytic.is_empty());
    for (id, grad) in analytic {
        let mut probe = store.clone();
        let numeric = central_difference(
            |x| {
                *probe.get_mut(*id) = x.clone();
                loss(&probe)
            },
            store.get(*id),
            H,
        );
        let err = relative_error(grad, &numeric);
        assert!(err < TOL, "{}: relative error {err}", store.entry(*id).name);
    }
}

#[test]
fn nll_gradient_check_through_decoder() {
    let cfg = DecoderConfig {
        layers: 1,
        model_dim: 8,
        heads: 2,
        ffn_dim: 16,
        vocab_size: 7,
        max_len: 6,
    };
    let mut store = ParamStore::new();
    let decoder = CaptionDecoder::new(&mut store, cfg, &mut rng::seeded(11)).unwrap();
    let memory = random(5, 8, 12);
    let inputs = [BOS, 4, 5, 6, EOS];
    let targets = [4, 5, 6, EOS, PAD];

    let mut g = Graph::new(&store);
    let mem = g.tape.input(memory.clone());
    let logits = decoder.forward(&mut g, mem, &inputs).unwrap();
    let loss = nll_on_tape(&mut g, logits, &targets).unwrap();
    let grads = g.tape.backward(loss);
    let analytic: Vec<_> = grads.params().into_iter().map(|(id, m)| (id, m.clone())).collect();
    assert_eq!(analytic.len(), store.len());
    check_params(&store, &analytic, |s| nll_loss(&decoder.logits(s, &memory, &inputs).unwrap(), &targets).unwrap());

    let numeric = central_difference(
        |m| nll_loss(&decoder.logits(&store, m, &inputs).unwrap(), &targets).unwrap(),
        &memory,
        H,
    );
    assert!(relative_error(grads.get(mem).unwrap(), &numeric) < TOL, "memory");
}

#[test]
fn conformer_block_gradient_check() {
    let mut store = ParamStore::new();
    let block = ConformerBlock::new(&mut store, "c", 8, 2, 16, 3, 4, &mut rng::seeded(21));
    let x = random(6, 8, 22);
    let weights = random(6, 8, 23);
    let objective = |s: &ParamStore, input: &Mat, want_grads: bool| {
        let mut g = Graph::new(s);
        let xv = g.tape.input(input.clone());
        let y = block.forward(&mut g, xv);
        let w = g.constant(weights.clone());
        let yw = g.tape.mul(y, w);
        let total = g.tape.sum_all(yw);
        let value = g.tape.scalar(total);
        let grads = want_grads.then(|| {
            let gr = g.tape.backward(total);
            let params: Vec<_> = gr.params().into_iter().map(|(id, m)| (id, m.clone())).collect();
            (params, gr.get(xv).unwrap().clone())
        });
        (value, grads)
    };
    let (_, grads) = objective(&store, &x, true);
    let (params, gx) = grads.unwrap();
    assert_eq!(params.len(), store.len());
    check_params(&store, &params, |s| objective(s, &x, false).0);
    let nx = central_difference(|m| objective(&store, m, false).0, &x, H);
    assert!(relative_error(&gx, &nx) < TOL, "block input");
}

#[test]
fn total_loss_composes_at_first_step() {
    let split = common::synth(6, 1, 3);
    let model = common::tiny_model(&split, 0);
    let batch = common::examples(&model, &split);
    for alpha in [0.0, 0.5, 1.0] {
        let contrastive = ContrastiveConfig { temperature: 0.5, alpha };
        let (loss, _) = model.loss_and_grads(&batch, &contrastive).unwrap();
        assert!((loss.total - (loss.nll + alpha * loss.infonce)).abs() < 1e-10, "alpha {alpha}");
        assert!((loss.total - multitask_loss(loss.nll, loss.infonce, alpha)).abs() < 1e-10);
    }
}

#[test]
fn alpha_runs_differ_by_exactly_the_contrastive_term_then_diverge() {
    let split = common::synth(8, 1, 4);
    let base = common::tiny_model(&split, 1);
    let data = common::examples(&base, &split);
    let run = |alpha: f64| {
        let mut model = base.clone();
        let cfg = TrainConfig {
            batch_size: 8,
            epochs: 2,
            lr: Some(1e-3),
            contrastive: ContrastiveConfig { temperature: 0.5, alpha },
            ..Default::default()
        };
        let mut losses = Vec::new();
        train(&mut model, &data, &[], &cfg, |s| losses.push(s.loss)).unwrap();
        losses
    };
    let (l0, l1) = (run(0.0), run(1.0));
    assert!(l1[0].infonce > 0.0);
    assert_eq!(l0[0].nll, l1[0].nll);
    assert!((l1[0].total - l0[0].total - l1[0].infonce).abs() < 1e-10);
    assert!((l0[1].nll - l1[1].nll).abs() > 1e-9, "parameters should diverge after the first update");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn infonce_is_nonnegative_and_permutation_consistent(seed in 0u64..10_000, b in 1usize..5, tau in 0.05f64..2.0) {
        let a = random(b, 4, seed);
        let c = random(b, 4, seed ^ 0xabc);
        let l = infonce_loss(&a, &c, tau).unwrap();
        prop_assert!(l >= -1e-12);
        // Relabeling the pairs together leaves the loss unchanged.
        let perm: Vec<usize> = (0..b).rev().collect();
        let pa = Array2::from_shape_fn((b, 4), |(i, j)| a[[perm[i], j]]);
        let pc = Array2::from_shape_fn((b, 4), |(i, j)| c[[perm[i], j]]);
        prop_assert!((infonce_loss(&pa, &pc, tau).unwrap() - l).abs() < 1e-10);
        // Rescaling rows does not change cosine similarities.
        prop_assert!((infonce_loss(&(&a * 3.0), &c, tau).unwrap() - l).abs() < 1e-10);
    }
}
