//! The contrastive loss on small batches: aligned and swapped pairs, the
//! effect of temperature, and a finite-difference check of its gradients.
//!
//! cargo run --release -p aacap --example infonce

use aacap::objectives::{infonce_loss, infonce_loss_with_grads, multitask_loss};
use aacap::rng;
use aacap_autodiff::gradcheck::{central_difference, relative_error};
use ndarray::{array, Array2};
use rand::Rng;

fn main() -> aacap::Result<()> {
    let eye = array![[1.0, 0.0], [0.0, 1.0]];
    let swapped = array![[0.0, 1.0], [1.0, 0.0]];
    println!("aligned pairs, tau 0.5:    {:.6}", infonce_loss(&eye, &eye, 0.5)?);
    println!("swapped pairs, tau 0.5:    {:.6}", infonce_loss(&eye, &swapped, 0.5)?);
    for tau in [0.05, 0.1, 0.5, 1.0] {
        println!("aligned pairs, tau {tau:<4}:   {:.6}", infonce_loss(&eye, &eye, tau)?);
    }

    let mut r = rng::seeded(1);
    let mut random = |rows, cols| Array2::from_shape_fn((rows, cols), |_| r.gen_range(-1.0..1.0));
    let (a, c) = (random(4, 6), random(4, 6));
    let (loss, ga, gc) = infonce_loss_with_grads(&a, &c, 0.1)?;
    let na = central_difference(|x| infonce_loss(x, &c, 0.1).unwrap(), &a, 1e-5);
    let nc = central_difference(|x| infonce_loss(&a, x, 0.1).unwrap(), &c, 1e-5);
    println!("random batch of 4: loss {loss:.6}");
    println!("gradient relative error: audio {:.2e}, text {:.2e}", relative_error(&ga, &na), relative_error(&gc, &nc));
    println!("total loss with nll 2.0 and alpha 1: {:.6}", multitask_loss(2.0, loss, 1.0));
    Ok(())
}
