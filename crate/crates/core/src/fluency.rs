//! Disfluency detection for generated captions.
//!
//! The detector is a trait so a learned classifier can be plugged in; the
//! default is a small rule set tuned to the failure modes of sampled
//! captions: stuttered words, verbless fragments and cut-off endings.

use crate::data::{normalize_text, CaptionText};

pub trait FluencyDetector: Send + Sync {
    fn is_fluent(&self, caption: &str) -> bool;
}

const FUNCTION_WORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "of", "to", "in", "on", "at", "with", "while", "as",
    "from", "by", "for", "into", "onto", "over", "under", "then", "is", "are", "some", "its",
    "their", "his", "her", "that", "than", "very",
];

const VERBS: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "being", "has", "have", "had", "do", "does", "did",
    "can", "could", "will", "would", "may", "might", "bark", "chirp", "sing", "ring", "run",
    "hum", "buzz", "fall", "blow", "flow", "pass", "drive", "speak", "talk", "play", "whir",
    "crackle", "pop", "move", "rumble", "beep", "honk", "tick", "drip", "splash", "howl",
    "meow", "roar", "creak", "squeak", "clap", "knock", "tap", "whistle", "shout", "laugh",
];

/// Rule-based detector. A caption is disfluent when a word is immediately
/// repeated, when no word looks like a verb, or when it ends on a function
/// word.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RuleBasedDetector;

fn looks_like_verb(word: &str) -> bool {
    if VERBS.contains(&word) {
        return true;
    }
    let n = word.len();
    (n > 4 && word.ends_with("ing"))
        || (n > 3 && word.ends_with("ed"))
        || (n > 3 && word.ends_with('s') && !word.ends_with("ss") && !word.ends_with("us"))
}

impl RuleBasedDetector {
    /// Reasons the caption is flagged, empty when fluent.
    pub fn issues(&self, caption: &str) -> Vec<&'static str> {
        let normalized = normalize_text(caption);
        let words: Vec<&str> = normalized.split(' ').filter(|w| !w.is_empty()).collect();
        let mut issues = Vec::new();
        if words.is_empty() {
            issues.push("empty");
            return issues;
        }
        if words.windows(2).any(|w| w[0] == w[1]) {
            issues.push("repeated word");
        }
        if !words.iter().any(|w| looks_like_verb(w)) {
            issues.push("no verb");
        }
        if FUNCTION_WORDS.contains(words.last().expect("non-empty")) {
            issues.push("truncated ending");
        }
        issues
    }
}

impl FluencyDetector for RuleBasedDetector {
    fn is_fluent(&self, caption: &str) -> bool {
        self.issues(caption).is_empty()
    }
}

/// Detector that accepts everything.
#[derive(Debug, Clone, Copy, Default)]
pub struct AcceptAll;

impl FluencyDetector for AcceptAll {
    fn is_fluent(&self, _caption: &str) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<CaptionText>,
    pub rejected: usize,
}

/// Drops captions the detector flags and counts the rejections.
pub fn filter_disfluent(captions: Vec<CaptionText>, detector: &dyn FluencyDetector) -> FilterOutcome {
    let total = captions.len();
    let kept: Vec<CaptionText> = captions
        .into_iter()
        .filter(|c| detector.is_fluent(c.as_str()))
        .collect();
    FilterOutcome {
        rejected: total - kept.len(),
        kept,
    }
}
