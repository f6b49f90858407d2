//! Caption text-embedding providers.
//!
//! Two providers stand in for a frozen external sentence encoder: a
//! deterministic hashed bag-of-words embedder for self-contained runs, and a
//! file of precomputed vectors produced by an external model.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::normalize_text;
use crate::error::{Error, Result};

/// Instruction prepended when caption embeddings are fetched from an
/// instruction-following sentence encoder.
pub const CAPTION_INSTRUCTION: &str = "Represent the audio caption:";

pub trait TextEmbedder: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Mean of fixed pseudo-random word vectors; the vector for a word is a
/// pure function of `(seed, word)`, so any caption can be embedded and
/// nothing is trained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedBowEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl HashedBowEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    fn word_vector(&self, word: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(word.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }
}

impl TextEmbedder for HashedBowEmbedder {
    fn name(&self) -> &str {
        "hashed-bow"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let normalized = normalize_text(text);
        let words: Vec<&str> = normalized.split(' ').filter(|w| !w.is_empty()).collect();
        if words.is_empty() {
            return Err(Error::EmptyCaption);
        }
        let mut acc = vec![0.0; self.dim];
        for w in &words {
            for (a, v) in acc.iter_mut().zip(self.word_vector(w)) {
                *a += v;
            }
        }
        let n = words.len() as f64;
        Ok(acc.into_iter().map(|v| v / n).collect())
    }
}

/// Embeddings keyed by id, loaded from a binary dump.
///
/// Layout (little-endian): magic `AACEMB01`, `u32` dim, `u32`-length-prefixed
/// provider name and instruction strings, `u64` entry count, then per entry a
/// `u32`-length-prefixed UTF-8 id followed by `dim` `f64` values. Entries are
/// written in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedEmbeddings {
    pub provider: String,
    pub instruction: String,
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

const EMB_MAGIC: &[u8; 8] = b"AACEMB01";

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::invalid(e.to_string()))
}

impl PrecomputedEmbeddings {
    pub fn new(provider: impl Into<String>, instruction: impl Into<String>, dim: usize) -> Self {
        Self {
            provider: provider.into(),
            instruction: instruction.into(),
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::invalid(format!(
                "embedding of width {} in a store of width {}",
                vector.len(),
                self.dim
            )));
        }
        self.entries.insert(id.into(), vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(EMB_MAGIC)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        write_str(&mut w, &self.provider)?;
        write_str(&mut w, &self.instruction)?;
        w.write_u64::<LittleEndian>(self.entries.len() as u64)?;
        for (id, v) in &self.entries {
            write_str(&mut w, id)?;
            for x in v {
                w.write_f64::<LittleEndian>(*x)?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != EMB_MAGIC {
            return Err(Error::invalid("not a precomputed embedding file"));
        }
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let provider = read_str(&mut r)?;
        let instruction = read_str(&mut r)?;
        let count = r.read_u64::<LittleEndian>()?;
        let mut out = Self::new(provider, instruction, dim);
        for _ in 0..count {
            let id = read_str(&mut r)?;
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                v.push(r.read_f64::<LittleEndian>()?);
            }
            out.entries.insert(id, v);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

impl TextEmbedder for PrecomputedEmbeddings {
    fn name(&self) -> &str {
        &self.provider
    }

    fn dim(&self) -> usize {
        self.dim
    }

    /// Looks up the normalized caption text as the id.
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let key = normalize_text(text);
        self.get(&key)
            .or_else(|| self.get(text))
            .map(<[f64]>::to_vec)
            .ok_or_else(|| Error::invalid(format!("no precomputed embedding for `{key}`")))
    }
}

/// Which provider a model uses; stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextEmbedderConfig {
    HashedBow { dim: usize, seed: u64 },
    Precomputed { path: std::path::PathBuf },
}

impl Default for TextEmbedderConfig {
    fn default() -> Self {
        TextEmbedderConfig::HashedBow { dim: 64, seed: 7 }
    }
}

impl TextEmbedderConfig {
    pub fn dim(&self) -> Result<usize> {
        match self {
            TextEmbedderConfig::HashedBow { dim, .. } => Ok(*dim),
            TextEmbedderConfig::Precomputed { path } => Ok(PrecomputedEmbeddings::load(path)?.dim()),
        }
    }

    pub fn build(&self) -> Result<Box<dyn TextEmbedder>> {
        Ok(match self {
            TextEmbedderConfig::HashedBow { dim, seed } => Box::new(HashedBowEmbedder::new(*dim, *seed)),
            TextEmbedderConfig::Precomputed { path } => Box::new(PrecomputedEmbeddings::load(path)?),
        })
    }
}
