use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The reserved out-of-vocabulary token.
pub const UNKNOWN: &str = "unknown";

/// Word→id mapping plus the dataset-level category counts the visual side
/// needs. Ids are assigned lexicographically so vocabulary construction is
/// deterministic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    words: BTreeMap<String, usize>,
    unknown_id: usize,
    pub n_object_categories: usize,
    pub n_predicate_categories: usize,
    pub threshold: usize,
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn unknown_id(&self) -> usize {
        self.unknown_id
    }

    /// Total mapping: unseen words map to the unknown id.
    pub fn id(&self, word: &str) -> usize {
        self.words.get(word).copied().unwrap_or(self.unknown_id)
    }

    /// Reverse lookup, mainly for debugging output.
    pub fn word(&self, id: usize) -> Option<&str> {
        self.words
            .iter()
            .find(|(_, &v)| v == id)
            .map(|(k, _)| k.as_str())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains_key(word)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        crate::util::write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let text = std::fs::read_to_string(path)?;
        let vocab: Vocab = serde_json::from_str(&text)?;
        if !vocab.words.contains_key(UNKNOWN) {
            return Err(Error::data(format!(
                "vocabulary file {} lacks the reserved \"{UNKNOWN}\" word",
                path.display()
            )));
        }
        Ok(vocab)
    }
}

/// Build a vocabulary from caption token lists. Words seen fewer than
/// `threshold` times map to the reserved `"unknown"` word, which is always
/// present. Ids follow lexicographic order of the kept words.
pub fn build_vocab(
    captions: &[Vec<String>],
    threshold: usize,
    n_object_categories: usize,
    n_predicate_categories: usize,
) -> Result<Vocab> {
    if captions.is_empty() || captions.iter().all(|c| c.is_empty()) {
        return Err(Error::data("cannot build a vocabulary from an empty corpus"));
    }
    if threshold < 1 {
        return Err(Error::Config("vocabulary threshold must be >= 1".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for caption in captions {
        for word in caption {
            *counts.entry(word.as_str()).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<&str> = counts
        .iter()
        .filter(|(_, &c)| c >= threshold)
        .map(|(&w, _)| w)
        .collect();
    if !kept.contains(&UNKNOWN) {
        kept.push(UNKNOWN);
    }
    kept.sort_unstable();

    let words: BTreeMap<String, usize> = kept
        .iter()
        .enumerate()
        .map(|(i, &w)| (w.to_string(), i))
        .collect();
    let unknown_id = words[UNKNOWN];
    Ok(Vocab {
        words,
        unknown_id,
        n_object_categories,
        n_predicate_categories,
        threshold,
    })
}
