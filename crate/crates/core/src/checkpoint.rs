//! Binary checkpoints.
//!
//! Layout (little-endian): magic `AACAPCKP`, `u32` format version, then
//! `u32`-length-prefixed UTF-8 sections for the JSON metadata and the
//! vocabulary, the two frozen extractor matrices, every parameter tensor
//! (name, trainable flag, shape, values) in store order, and the optional
//! optimizer moments. Every field is written in a fixed order, so loading
//! and saving again reproduces the file byte for byte.

use std::io::{Read, Write};
use std::path::Path;

use aacap_autodiff::{Mat, ParamStore};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::data::Tokenizer;
use crate::encoder::FrozenExtractor;
use crate::error::{Error, Result};
use crate::model::{Captioner, ModelConfig};
use crate::optim::AdamWState;
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 8] = b"AACAPCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    train: TrainConfig,
    step: u64,
    val_accuracy: Option<f64>,
    extractor_fingerprint: String,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Captioner,
    pub train_config: TrainConfig,
    pub optimizer: Option<AdamWState>,
    pub step: u64,
    pub val_accuracy: Option<f64>,
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(e.to_string()))
}

fn write_mat(w: &mut impl Write, m: &Mat) -> Result<()> {
    w.write_u32::<LittleEndian>(m.nrows() as u32)?;
    w.write_u32::<LittleEndian>(m.ncols() as u32)?;
    for v in m.iter() {
        w.write_f64::<LittleEndian>(*v)?;
    }
    Ok(())
}

fn read_mat(r: &mut impl Read) -> Result<Mat> {
    let rows = r.read_u32::<LittleEndian>()? as usize;
    let cols = r.read_u32::<LittleEndian>()? as usize;
    let mut data = vec![0.0; rows * cols];
    r.read_f64_into::<LittleEndian>(&mut data)?;
    Mat::from_shape_vec((rows, cols), data).map_err(|e| Error::Checkpoint(e.to_string()))
}

impl Checkpoint {
    pub fn new(
        model: Captioner,
        train_config: TrainConfig,
        optimizer: Option<AdamWState>,
        step: u64,
        val_accuracy: Option<f64>,
    ) -> Self {
        Self {
            model,
            train_config,
            optimizer,
            step,
            val_accuracy,
        }
    }

    pub fn extractor_fingerprint(&self) -> String {
        self.model.extractor.fingerprint()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        let meta = Meta {
            model: self.model.config.clone(),
            train: self.train_config.clone(),
            step: self.step,
            val_accuracy: self.val_accuracy,
            extractor_fingerprint: self.extractor_fingerprint(),
        };
        write_str(&mut w, &serde_json::to_string(&meta)?)?;
        write_str(&mut w, &self.model.tokenizer.to_vocab_string())?;
        for m in self.model.extractor.weights() {
            write_mat(&mut w, m)?;
        }
        let params = &self.model.params;
        w.write_u32::<LittleEndian>(params.len() as u32)?;
        for id in params.ids() {
            let e = params.entry(id);
            write_str(&mut w, &e.name)?;
            w.write_u8(u8::from(e.trainable))?;
            write_mat(&mut w, &e.value)?;
        }
        match &self.optimizer {
            None => w.write_u8(0)?,
            Some(state) => {
                w.write_u8(1)?;
                w.write_u64::<LittleEndian>(state.step)?;
                for (m, v) in state.m.iter().zip(&state.v) {
                    write_mat(&mut w, m)?;
                    write_mat(&mut w, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let meta: Meta = serde_json::from_str(&read_str(&mut r)?)?;
        let tokenizer = Tokenizer::from_vocab_str(&read_str(&mut r)?)?;
        let conv1 = read_mat(&mut r)?;
        let conv2 = read_mat(&mut r)?;
        let extractor = FrozenExtractor::from_weights(meta.model.encoder.mel, conv1, conv2)?;
        if extractor.fingerprint() != meta.extractor_fingerprint {
            return Err(Error::Checkpoint("frozen extractor fingerprint mismatch".into()));
        }
        let count = r.read_u32::<LittleEndian>()? as usize;
        let mut stored = ParamStore::new();
        for _ in 0..count {
            let name = read_str(&mut r)?;
            let trainable = r.read_u8()? != 0;
            let value = read_mat(&mut r)?;
            stored.add(name, value, trainable);
        }
        let model = Captioner::with_parts(meta.model, tokenizer, extractor, &stored)?;
        let optimizer = match r.read_u8()? {
            0 => None,
            _ => {
                let step = r.read_u64::<LittleEndian>()?;
                let mut m = Vec::with_capacity(count);
                let mut v = Vec::with_capacity(count);
                for _ in 0..count {
                    m.push(read_mat(&mut r)?);
                    v.push(read_mat(&mut r)?);
                }
                Some(AdamWState { step, m, v })
            }
        };
        Ok(Self {
            model,
            train_config: meta.train,
            optimizer,
            step: meta.step,
            val_accuracy: meta.val_accuracy,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&bytes[..])
    }
}
