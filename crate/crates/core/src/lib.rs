pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod fluency;
pub mod inference;
pub mod metrics;
pub mod mixup;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod text_embed;
pub mod train;

pub use error::{Error, Result};
