//! Translation backends for the translate-then-lookup search level.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use thiserror::Error;

use crate::index::normalize_term;
use crate::neuralmt::TranslationModel;

/// Maps a term into the pivot language. Implementations are pure: the same
/// input always yields the same output, and `None` means "cannot translate"
/// (never an identity fallback).
pub trait Translator: Send + Sync {
    fn translate(&self, term: &str) -> Option<String>;
}

impl<T: Translator + ?Sized> Translator for &T {
    fn translate(&self, term: &str) -> Option<String> {
        (**self).translate(term)
    }
}

impl<T: Translator + ?Sized> Translator for Box<T> {
    fn translate(&self, term: &str) -> Option<String> {
        (**self).translate(term)
    }
}

/// Translator that never translates; search stops after the cross-lingual
/// level.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoTranslator;

impl Translator for NoTranslator {
    fn translate(&self, _term: &str) -> Option<String> {
        None
    }
}

#[derive(Debug, Error)]
pub enum DictionaryError {
    #[error("cannot read dictionary {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dictionary line {0}: expected source<TAB>target")]
    Malformed(usize),
}

/// Lookup table keyed on the normalized source text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DictionaryTranslator {
    entries: HashMap<String, String>,
}

impl DictionaryTranslator {
    /// The first entry for a normalized source wins.
    pub fn from_pairs<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: Into<String>,
    {
        let mut entries = HashMap::new();
        for (src, tgt) in pairs {
            let key = normalize_term(src.as_ref()).text;
            if !key.is_empty() {
                entries.entry(key).or_insert_with(|| tgt.into());
            }
        }
        Self { entries }
    }

    pub fn parse(text: &str) -> Result<Self, DictionaryError> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (src, tgt) = line.split_once('\t').ok_or(DictionaryError::Malformed(i + 1))?;
            if src.trim().is_empty() || tgt.trim().is_empty() {
                return Err(DictionaryError::Malformed(i + 1));
            }
            pairs.push((src.trim().to_string(), tgt.trim().to_string()));
        }
        Ok(Self::from_pairs(pairs))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DictionaryError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| DictionaryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Translator for DictionaryTranslator {
    fn translate(&self, term: &str) -> Option<String> {
        self.entries.get(&normalize_term(term).text).cloned()
    }
}

pub fn translate_dictionary(t: &DictionaryTranslator, term: &str) -> Option<String> {
    t.translate(term)
}

/// Greedy decoding with a trained character-level model.
#[derive(Debug, Clone)]
pub struct NeuralTranslator {
    model: TranslationModel,
}

impl NeuralTranslator {
    pub fn new(model: TranslationModel) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &TranslationModel {
        &self.model
    }
}

impl Translator for NeuralTranslator {
    fn translate(&self, term: &str) -> Option<String> {
        translate_neural(&self.model, term)
    }
}

pub fn translate_neural(model: &TranslationModel, term: &str) -> Option<String> {
    if term.trim().is_empty() {
        return None;
    }
    model.decode_greedy(term).ok().filter(|s| !s.trim().is_empty())
}

/// Wraps a translator and counts calls.
#[derive(Debug, Default)]
pub struct CountingTranslator<T> {
    inner: T,
    calls: AtomicUsize,
}

impl<T> CountingTranslator<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl<T: Translator> Translator for CountingTranslator<T> {
    fn translate(&self, term: &str) -> Option<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.translate(term)
    }
}
