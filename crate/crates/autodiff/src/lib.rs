//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! replays it in reverse and returns gradients for every node that depends on
//! a trainable input. Model parameters live in a [`ParamStore`] and are bound
//! to a tape per step.

mod params;
mod tape;

pub mod gradcheck;

pub use params::{ParamEntry, ParamId, ParamStore};
pub use tape::{Grads, Tape, Var};

pub type Mat = ndarray::Array2<f64>;
