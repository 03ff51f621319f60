//! Tokenization and token multisets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Splits text into lowercase alphanumeric tokens.
///
/// Lowercasing is Unicode-aware; any non-alphanumeric character separates
/// tokens. No stemming, no stop words.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Multiset of tokens. Every stored count is at least one.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBag {
    counts: BTreeMap<String, u32>,
}

impl TokenBag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_text(text: &str) -> Self {
        let mut bag = Self::new();
        bag.add_text(text);
        bag
    }

    pub fn add_text(&mut self, text: &str) {
        for token in tokenize(text) {
            self.add(token, 1);
        }
    }

    pub fn add(&mut self, token: impl Into<String>, count: u32) {
        if count == 0 {
            return;
        }
        *self.counts.entry(token.into()).or_insert(0) += count;
    }

    pub fn merge(&mut self, other: &TokenBag) {
        for (t, &c) in &other.counts {
            self.add(t.clone(), c);
        }
    }

    pub fn count(&self, token: &str) -> u32 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    /// Number of distinct tokens.
    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// Total number of tokens counting multiplicity.
    pub fn total(&self) -> u64 {
        self.counts.values().map(|&c| u64::from(c)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Tokens in lexicographic order with their counts.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.counts.iter().map(|(t, &c)| (t.as_str(), c))
    }
}

impl<S: Into<String>> FromIterator<S> for TokenBag {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut bag = Self::new();
        for t in iter {
            bag.add(t, 1);
        }
        bag
    }
}
