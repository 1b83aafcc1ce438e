//! Token/id bijection with fixed reserved ids.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

pub const PAD: u32 = 0;
pub const START: u32 = 1;
pub const END: u32 = 2;
pub const UNK: u32 = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<start>", "<end>", "<unk>"];

/// Total token<->id bijection. Reserved ids 0..=3 are fixed so checkpoints
/// stay stable; real tokens start at id 4.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from corpus token counts. Tokens with count >=
    /// `min_count` get ids 4.. ordered by descending count, ties broken
    /// lexicographically; everything else maps to UNK.
    pub fn from_counts(counts: &BTreeMap<String, usize>, min_count: usize) -> Vocab {
        let mut kept: Vec<(&String, usize)> = counts
            .iter()
            .filter(|(t, &c)| c >= min_count && !RESERVED.contains(&t.as_str()))
            .map(|(t, &c)| (t, c))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t.clone()))
            .collect();
        Vocab::from_tokens_unchecked(tokens)
    }

    fn from_tokens_unchecked(tokens: Vec<String>) -> Vocab {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, index }
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Vocab> {
        if tokens.len() < RESERVED.len() {
            return Err(Error::Malformed("vocabulary shorter than reserved ids".into()));
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens[i] != *r {
                return Err(Error::Malformed(format!(
                    "vocabulary id {i} must be {r}, found {}",
                    tokens[i]
                )));
            }
        }
        let mut seen = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if let Some(prev) = seen.insert(t.clone(), i) {
                return Err(Error::Malformed(format!(
                    "vocabulary token {t} appears at both id {prev} and id {i}"
                )));
            }
        }
        Ok(Vocab::from_tokens_unchecked(tokens))
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Vec<String> {
        v.tokens
    }
}
