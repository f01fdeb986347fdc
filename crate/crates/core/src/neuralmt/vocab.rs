use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SPECIALS: usize = 4;

/// Character vocabulary. Ids 0..4 are PAD, BOS, EOS and UNK; ordinary
/// characters follow in codepoint order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    ids: HashMap<char, usize>,
}

impl CharVocab {
    pub fn build<'a, I>(texts: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let set: BTreeSet<char> = texts
            .into_iter()
            .flat_map(|t| t.to_lowercase().chars().collect::<Vec<_>>())
            .collect();
        Self::from_chars(set.into_iter().collect())
    }

    fn from_chars(chars: Vec<char>) -> Self {
        let ids = chars.iter().enumerate().map(|(i, &c)| (c, i + SPECIALS)).collect();
        Self { chars, ids }
    }

    pub fn len(&self) -> usize {
        self.chars.len() + SPECIALS
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn id(&self, c: char) -> usize {
        self.ids.get(&c).copied().unwrap_or(UNK)
    }

    pub fn char(&self, id: usize) -> Option<char> {
        id.checked_sub(SPECIALS).and_then(|i| self.chars.get(i).copied())
    }

    /// Lowercases and maps to ids; unseen characters become UNK.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.to_lowercase().chars().map(|c| self.id(c)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().filter_map(|&i| self.char(i)).collect()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }
}

impl Serialize for CharVocab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.chars.iter().collect::<String>().serialize(s)
    }
}

impl<'de> Deserialize<'de> for CharVocab {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let chars: Vec<char> = s.chars().collect();
        let sorted = chars.windows(2).all(|w| w[0] < w[1]);
        if !sorted || chars.iter().any(|c| c.to_lowercase().ne(std::iter::once(*c))) {
            return Err(serde::de::Error::custom("vocabulary must be sorted, unique and lowercase"));
        }
        Ok(Self::from_chars(chars))
    }
}
