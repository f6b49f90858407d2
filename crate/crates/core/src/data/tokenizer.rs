use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::{normalize_text, CaptionSource, CaptionText, DatasetSplit, SplitName};
use crate::error::{Error, Result};

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const PAD: u32 = 2;
pub const UNK: u32 = 3;

pub const SPECIALS: [&str; 4] = ["<bos>", "<eos>", "<pad>", "<unk>"];

/// Token ids framed by `BOS ... EOS`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<u32>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>, vocab_size: usize) -> Result<Self> {
        if ids.len() < 2 || ids[0] != BOS || *ids.last().unwrap() != EOS {
            return Err(Error::invalid("token sequence must start with BOS and end with EOS"));
        }
        if let Some(bad) = ids.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} out of range for vocabulary of {vocab_size}"
            )));
        }
        Ok(Self { ids })
    }

    /// Builds `BOS content EOS` without range checks; ids come from a tokenizer.
    pub(crate) fn framed(content: &[u32]) -> Self {
        let mut ids = Vec::with_capacity(content.len() + 2);
        ids.push(BOS);
        ids.extend_from_slice(content);
        ids.push(EOS);
        Self { ids }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Tokens between the BOS and EOS markers.
    pub fn content(&self) -> &[u32] {
        &self.ids[1..self.ids.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Decoder inputs for teacher forcing: everything but the final EOS.
    pub fn inputs(&self) -> &[u32] {
        &self.ids[..self.ids.len() - 1]
    }

    /// Prediction targets: everything but the leading BOS.
    pub fn targets(&self) -> &[u32] {
        &self.ids[1..]
    }
}

/// Word-level tokenizer with four reserved ids (`BOS`, `EOS`, `PAD`, `UNK`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Tokenizer {
    /// Frequency-ranked vocabulary over the given captions; ties are broken
    /// lexicographically. `max_size` counts the reserved ids.
    pub fn from_captions<'a>(
        captions: impl IntoIterator<Item = &'a CaptionText>,
        max_size: usize,
    ) -> Result<Self> {
        if max_size < SPECIALS.len() {
            return Err(Error::invalid(format!(
                "vocabulary size {max_size} cannot hold the {} reserved tokens",
                SPECIALS.len()
            )));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut any = false;
        for caption in captions {
            any = true;
            for word in caption.words() {
                *counts.entry(word).or_default() += 1;
            }
        }
        if !any {
            return Err(Error::invalid("cannot build a vocabulary from an empty caption corpus"));
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        // BTreeMap iteration is already lexicographic; a stable sort keeps that order within ties.
        ranked.sort_by(|a, b| b.1.cmp(&a.1));
        let words = ranked
            .into_iter()
            .take(max_size - SPECIALS.len())
            .map(|(w, _)| w.to_string());
        Ok(Self::from_tokens(
            SPECIALS.iter().map(|s| s.to_string()).chain(words).collect(),
        ))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn tokenize(&self, caption: &CaptionText) -> TokenSequence {
        let content: Vec<u32> = caption.words().map(|w| self.id(w)).collect();
        TokenSequence::framed(&content)
    }

    /// Tokenizes raw text after normalization; fails on text that normalizes to nothing.
    pub fn tokenize_str(&self, text: &str) -> Result<TokenSequence> {
        Ok(self.tokenize(&CaptionText::new(text, CaptionSource::Generated)?))
    }

    /// Joins the words of `ids`, skipping special tokens.
    pub fn decode_ids(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| id as usize >= SPECIALS.len() || id == UNK)
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn detokenize(&self, tokens: &TokenSequence) -> Result<CaptionText> {
        CaptionText::new(&self.decode_ids(tokens.content()), CaptionSource::Generated)
    }

    /// Newline-delimited tokens preceded by a line holding the reserved-token count.
    pub fn to_vocab_string(&self) -> String {
        let mut out = format!("{}\n", SPECIALS.len());
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_vocab_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::invalid("vocabulary file is empty"))?;
        let specials: usize = header
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad vocabulary header `{header}`")))?;
        if specials != SPECIALS.len() {
            return Err(Error::invalid(format!(
                "vocabulary declares {specials} reserved tokens, expected {}",
                SPECIALS.len()
            )));
        }
        let tokens: Vec<String> = lines.map(|l| l.to_string()).collect();
        if tokens.len() < specials
            || tokens[..specials].iter().zip(SPECIALS).any(|(a, b)| a != b)
        {
            return Err(Error::invalid("vocabulary reserved tokens are missing or reordered"));
        }
        Ok(Self::from_tokens(tokens))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_vocab_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_vocab_str(&text)
    }
}

/// Vocabulary over the captions of every training split in `splits`.
pub fn build_vocabulary(splits: &[&DatasetSplit], max_size: usize) -> Result<Tokenizer> {
    let captions = splits
        .iter()
        .filter(|s| s.name() == SplitName::Train)
        .flat_map(|s| s.pairs())
        .flat_map(|p| p.captions());
    Tokenizer::from_captions(captions, max_size)
}

/// Normalizes and splits raw text into words (used by metrics).
pub fn words_of(text: &str) -> Vec<String> {
    normalize_text(text)
        .split(' ')
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn caps(texts: &[&str]) -> Vec<CaptionText> {
        texts.iter().map(|t| CaptionText::human(t).unwrap()).collect()
    }

    #[test]
    fn small_corpus_keeps_every_word() {
        let corpus = caps(&["a dog barks", "a cat"]);
        let tok = Tokenizer::from_captions(&corpus, 10).unwrap();
        assert_eq!(tok.vocab_size(), 8);
        for w in ["a", "dog", "barks", "cat"] {
            assert!(tok.contains(w), "{w}");
        }
    }

    #[test]
    fn truncation_breaks_ties_lexicographically() {
        // Brute-force count: a=2, barks=1, cat=1, dog=1.
        let corpus = caps(&["a dog barks", "a cat"]);
        let mut counts: Vec<(String, usize)> = Vec::new();
        for c in &corpus {
            for w in c.words() {
                match counts.iter_mut().find(|(k, _)| k == w) {
                    Some((_, n)) => *n += 1,
                    None => counts.push((w.to_string(), 1)),
                }
            }
        }
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let expected: Vec<&str> = counts.iter().take(2).map(|(w, _)| w.as_str()).collect();
        assert_eq!(expected, ["a", "barks"]);

        let tok = Tokenizer::from_captions(&corpus, 6).unwrap();
        assert_eq!(tok.token(4), Some("a"));
        assert_eq!(tok.token(5), Some("barks"));
        assert!(!tok.contains("cat") && !tok.contains("dog"));

        let tok7 = Tokenizer::from_captions(&corpus, 7).unwrap();
        assert_eq!(tok7.token(6), Some("cat"));
    }

    #[test]
    fn unseen_words_map_to_unk() {
        let tok = Tokenizer::from_captions(&caps(&["a dog barks"]), 10).unwrap();
        let seq = tok.tokenize(&CaptionText::human("a bird sings").unwrap());
        assert_eq!(seq.content()[1], UNK);
        assert_eq!(seq.content()[2], UNK);
    }

    #[test]
    fn framing_and_round_trip() {
        let tok = Tokenizer::from_captions(&caps(&["a dog barks"]), 10).unwrap();
        let seq = tok.tokenize(&CaptionText::human("A dog barks").unwrap());
        let ids = seq.ids();
        assert_eq!(ids[0], BOS);
        assert_eq!(*ids.last().unwrap(), EOS);
        assert_eq!(
            ids[1..4],
            [tok.id("a"), tok.id("dog"), tok.id("barks")]
        );
        assert_eq!(tok.detokenize(&seq).unwrap().as_str(), "a dog barks");
    }

    #[test]
    fn too_small_or_empty_vocab_is_an_error() {
        assert!(Tokenizer::from_captions(&caps(&["a"]), 3).is_err());
        assert!(Tokenizer::from_captions(&Vec::<CaptionText>::new(), 10).is_err());
    }

    #[test]
    fn vocab_file_round_trip() {
        let tok = Tokenizer::from_captions(&caps(&["a dog barks", "a cat"]), 10).unwrap();
        let text = tok.to_vocab_string();
        assert!(text.starts_with("4\n<bos>\n<eos>\n<pad>\n<unk>\n"));
        assert_eq!(Tokenizer::from_vocab_str(&text).unwrap(), tok);
        assert!(Tokenizer::from_vocab_str("3\n<bos>\n").is_err());
    }

    #[test]
    fn token_sequence_validation() {
        assert!(TokenSequence::new(vec![BOS, 5, EOS], 6).is_ok());
        assert!(TokenSequence::new(vec![BOS, 6, EOS], 6).is_err());
        assert!(TokenSequence::new(vec![5, EOS], 6).is_err());
    }
}
