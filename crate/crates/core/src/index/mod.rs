//! Per-language term indexes with exact and bounded-fuzzy lookup.
//!
//! Exact lookup compares the full normalized text. Fuzzy lookup pairs query
//! and entry tokens by position (token counts must agree) and allows each
//! query token an edit budget that depends on its length: one edit for
//! tokens of five or more characters, none for shorter ones.

mod cache;
mod levenshtein;
mod normalize;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::terminology::{ConceptId, Lexicon};

pub use cache::{content_digest, load_index_cache, read_index_cache, save_index_cache, write_index_cache, CacheError, CACHE_MAGIC};
pub use levenshtein::{levenshtein, within_distance};
pub use normalize::{normalize_term, NormalizedTerm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzyConfig {
    pub max_edit_per_long_token: usize,
    /// Tokens with at least this many codepoints get the edit budget.
    pub long_token_min_len: usize,
}

impl Default for FuzzyConfig {
    fn default() -> Self {
        Self {
            max_edit_per_long_token: 1,
            long_token_min_len: 5,
        }
    }
}

impl FuzzyConfig {
    pub fn validate(&self) -> Result<(), IndexError> {
        if self.long_token_min_len == 0 {
            return Err(IndexError::InvalidFuzzyConfig("long_token_min_len must be >= 1"));
        }
        Ok(())
    }
}

pub fn token_edit_budget(token: &str, cfg: &FuzzyConfig) -> usize {
    if token.chars().count() >= cfg.long_token_min_len {
        cfg.max_edit_per_long_token
    } else {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MatchKind {
    Exact,
    Fuzzy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub cui: ConceptId,
    pub matched_term: NormalizedTerm,
    pub preferred: bool,
    pub match_kind: MatchKind,
    pub source_lang: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IndexError {
    #[error("language {0:?} is not present in the lexicon")]
    UnknownLanguage(String),
    #[error("invalid fuzzy configuration: {0}")]
    InvalidFuzzyConfig(&'static str),
}

/// One distinct `(normalized text, cui)` pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub term: NormalizedTerm,
    pub cui: ConceptId,
    /// True if any source row for this pair was a preferred label.
    pub preferred: bool,
}

/// Entries sharing one token count, with postings on `(position, token)` so
/// positions that must match exactly can be intersected before verifying the
/// remaining tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Bucket {
    entries: Vec<usize>,
    postings: HashMap<(usize, String), Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermIndex {
    lang: String,
    entries: Vec<IndexEntry>,
    exact: HashMap<String, Vec<usize>>,
    buckets: BTreeMap<usize, Bucket>,
}

impl TermIndex {
    /// Builds an index from `(term, cui, preferred)` triples. Terms are
    /// normalized here; duplicate `(text, cui)` pairs are merged.
    pub fn from_terms<I, S>(lang: &str, terms: I) -> Self
    where
        I: IntoIterator<Item = (S, ConceptId, bool)>,
        S: AsRef<str>,
    {
        let mut merged: BTreeMap<(ConceptId, String), (NormalizedTerm, bool)> = BTreeMap::new();
        for (raw, cui, preferred) in terms {
            let term = normalize_term(raw.as_ref());
            if term.is_empty() {
                continue;
            }
            merged
                .entry((cui, term.text.clone()))
                .and_modify(|e| e.1 |= preferred)
                .or_insert((term, preferred));
        }
        let entries: Vec<IndexEntry> = merged
            .into_iter()
            .map(|((cui, _), (term, preferred))| IndexEntry { term, cui, preferred })
            .collect();
        Self::from_entries(lang, entries)
    }

    fn from_entries(lang: &str, entries: Vec<IndexEntry>) -> Self {
        let mut exact: HashMap<String, Vec<usize>> = HashMap::new();
        let mut buckets: BTreeMap<usize, Bucket> = BTreeMap::new();
        for (id, e) in entries.iter().enumerate() {
            exact.entry(e.term.text.clone()).or_default().push(id);
            let bucket = buckets.entry(e.term.token_count()).or_default();
            bucket.entries.push(id);
            for (pos, tok) in e.term.tokens.iter().enumerate() {
                bucket.postings.entry((pos, tok.clone())).or_default().push(id);
            }
        }
        Self {
            lang: lang.to_string(),
            entries,
            exact,
            buckets,
        }
    }

    pub fn lang(&self) -> &str {
        &self.lang
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn exact_key_count(&self) -> usize {
        self.exact.len()
    }

    pub fn concept_count(&self) -> usize {
        let mut cuis: Vec<ConceptId> = self.entries.iter().map(|e| e.cui).collect();
        cuis.dedup();
        cuis.len()
    }

    /// `(cui, preferred)` pairs stored under an exact key.
    pub fn exact_entries(&self, text: &str) -> Vec<(ConceptId, bool)> {
        self.exact
            .get(text)
            .map(|ids| ids.iter().map(|&i| (self.entries[i].cui, self.entries[i].preferred)).collect())
            .unwrap_or_default()
    }

    /// Entries keyed by token count, for callers that want to scan buckets.
    pub fn bucket_sizes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.buckets.iter().map(|(k, b)| (*k, b.entries.len()))
    }

    fn candidate(&self, id: usize, kind: MatchKind) -> Candidate {
        let e = &self.entries[id];
        Candidate {
            cui: e.cui,
            matched_term: e.term.clone(),
            preferred: e.preferred,
            match_kind: kind,
            source_lang: self.lang.clone(),
        }
    }

    pub fn exact_lookup(&self, query: &NormalizedTerm) -> Vec<Candidate> {
        match self.exact.get(&query.text) {
            Some(ids) => ids.iter().map(|&id| self.candidate(id, MatchKind::Exact)).collect(),
            None => Vec::new(),
        }
    }

    /// Every entry with the query's token count whose tokens are each within
    /// the query token's edit budget. Zero-token queries match nothing.
    pub fn fuzzy_lookup(&self, query: &NormalizedTerm, cfg: &FuzzyConfig) -> Vec<Candidate> {
        if query.tokens.is_empty() {
            return Vec::new();
        }
        let Some(bucket) = self.buckets.get(&query.tokens.len()) else {
            return Vec::new();
        };
        let budgets: Vec<usize> = query.tokens.iter().map(|t| token_edit_budget(t, cfg)).collect();

        let mut pool: Option<Vec<usize>> = None;
        for (pos, (tok, &budget)) in query.tokens.iter().zip(&budgets).enumerate() {
            if budget > 0 {
                continue;
            }
            let Some(list) = bucket.postings.get(&(pos, tok.clone())) else {
                return Vec::new();
            };
            pool = Some(match pool {
                None => list.clone(),
                Some(prev) => intersect_sorted(&prev, list),
            });
        }
        let pool = pool.as_deref().unwrap_or(&bucket.entries);

        pool.iter()
            .copied()
            .filter(|&id| {
                let entry = &self.entries[id];
                query
                    .tokens
                    .iter()
                    .zip(&entry.term.tokens)
                    .zip(&budgets)
                    .all(|((q, e), &b)| within_distance(q, e, b))
            })
            .map(|id| self.candidate(id, MatchKind::Fuzzy))
            .collect()
    }
}

fn intersect_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

pub fn build_index(lexicon: &Lexicon, lang: &str) -> Result<TermIndex, IndexError> {
    if !lexicon.languages().contains(lang) {
        return Err(IndexError::UnknownLanguage(lang.to_string()));
    }
    Ok(TermIndex::from_terms(
        lang,
        lexicon.records_for_language(lang).map(|r| (r.term.as_str(), r.cui, r.preferred)),
    ))
}

pub fn exact_lookup(index: &TermIndex, query: &NormalizedTerm) -> Vec<Candidate> {
    index.exact_lookup(query)
}

pub fn fuzzy_lookup(index: &TermIndex, query: &NormalizedTerm, cfg: &FuzzyConfig) -> Vec<Candidate> {
    index.fuzzy_lookup(query, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terminology::{default_languages, parse_lexicon};
    use proptest::prelude::*;

    fn cui(n: u32) -> ConceptId {
        ConceptId::new(n).unwrap()
    }

    fn lexicon(text: &str) -> Lexicon {
        parse_lexicon(text, &default_languages()).unwrap().lexicon
    }

    #[test]
    fn budgets() {
        let cfg = FuzzyConfig::default();
        assert_eq!(token_edit_budget("lung", &cfg), 0);
        assert_eq!(token_edit_budget("cancer", &cfg), 1);
        assert_eq!(token_edit_budget("liver", &cfg), 1);
        // codepoints, not bytes
        assert_eq!(token_edit_budget("éééé", &cfg), 0);
    }

    #[test]
    fn build_counts_keys() {
        let lex = lexicon("C0000001\tfr\tgrippe\t1\tDISO\nC0000002\tfr\tfièvre\t1\tDISO\nC0000003\ten\tflu\t1\tDISO\n");
        let idx = build_index(&lex, "fr").unwrap();
        assert_eq!(idx.exact_key_count(), 2);
        assert_eq!(idx.len(), 2);
        assert_eq!(build_index(&lex, "xx"), Err(IndexError::UnknownLanguage("xx".into())));
    }

    #[test]
    fn shared_term_maps_to_both_concepts() {
        let lex = lexicon("C0000009\tfr\tgrippe\t0\tDISO\nC0000002\tfr\tGrippe\t1\tDISO\n");
        let idx = build_index(&lex, "fr").unwrap();
        assert_eq!(idx.exact_key_count(), 1);
        assert_eq!(idx.exact_entries("grippe"), vec![(cui(2), true), (cui(9), false)]);
    }

    #[test]
    fn duplicate_rows_merge_preferred_flag() {
        let idx = TermIndex::from_terms("en", [("Flu", cui(1), false), ("flu", cui(1), true)]);
        assert_eq!(idx.len(), 1);
        assert!(idx.entries()[0].preferred);
    }

    #[test]
    fn exact_lookup_examples() {
        let lex = lexicon("C0021400\tfr\tgrippe\t1\tDISO\n");
        let idx = build_index(&lex, "fr").unwrap();
        let hits = idx.exact_lookup(&normalize_term("grippe"));
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].cui, cui(21400));
        assert_eq!(hits[0].match_kind, MatchKind::Exact);
        assert_eq!(hits[0].source_lang, "fr");
        assert!(idx.exact_lookup(&normalize_term("grippes")).is_empty());
        assert_eq!(idx.exact_lookup(&normalize_term("GRIPPE")), hits);
    }

    #[test]
    fn fuzzy_examples() {
        let cfg = FuzzyConfig::default();
        let idx = TermIndex::from_terms("en", [("cancer", cui(1), true), ("lung", cui(2), true), ("sitting", cui(3), true)]);
        let hits = idx.fuzzy_lookup(&normalize_term("cancers"), &cfg);
        assert_eq!(hits.iter().map(|c| c.cui).collect::<Vec<_>>(), vec![cui(1)]);
        assert_eq!(hits[0].match_kind, MatchKind::Fuzzy);
        assert!(idx.fuzzy_lookup(&normalize_term("lang"), &cfg).is_empty());
        assert!(idx.fuzzy_lookup(&normalize_term("kitten"), &cfg).is_empty());
        assert!(idx.fuzzy_lookup(&normalize_term(""), &cfg).is_empty());
    }

    #[test]
    fn fuzzy_requires_positional_token_pairing() {
        let cfg = FuzzyConfig::default();
        let idx = TermIndex::from_terms(
            "en",
            [("lung cancer", cui(5), true), ("cancer lung", cui(6), true), ("lung", cui(7), true)],
        );
        let hits = idx.fuzzy_lookup(&normalize_term("lung cancers"), &cfg);
        assert_eq!(hits.iter().map(|c| c.cui).collect::<Vec<_>>(), vec![cui(5)]);
        // short token must match exactly
        assert!(idx.fuzzy_lookup(&normalize_term("lang cancer"), &cfg).is_empty());
    }

    #[test]
    fn fuzzy_order_is_cui_then_text() {
        let cfg = FuzzyConfig::default();
        let idx = TermIndex::from_terms("en", [("tumour", cui(9), true), ("tumor", cui(3), false), ("tumors", cui(3), true)]);
        let hits = idx.fuzzy_lookup(&normalize_term("tumor"), &cfg);
        let got: Vec<_> = hits.iter().map(|c| (c.cui, c.matched_term.text.as_str())).collect();
        assert_eq!(got, vec![(cui(3), "tumor"), (cui(3), "tumors"), (cui(9), "tumour")]);
    }

    fn arb_term() -> impl Strategy<Value = String> {
        proptest::collection::vec("[abcde]{1,7}", 1..4).prop_map(|t| t.join(" "))
    }

    proptest! {
        #[test]
        fn exact_hits_are_fuzzy_hits(terms in proptest::collection::vec(arb_term(), 1..30), q in arb_term()) {
            let idx = TermIndex::from_terms("en", terms.iter().enumerate().map(|(i, t)| (t.as_str(), cui(i as u32), true)));
            let query = normalize_term(&q);
            let cfg = FuzzyConfig::default();
            let fuzzy: Vec<_> = idx.fuzzy_lookup(&query, &cfg).into_iter().map(|c| c.cui).collect();
            for c in idx.exact_lookup(&query) {
                prop_assert!(fuzzy.contains(&c.cui));
            }
            prop_assert_eq!(idx.fuzzy_lookup(&query, &cfg), idx.fuzzy_lookup(&query, &cfg));
        }

        #[test]
        fn fuzzy_equals_linear_scan(terms in proptest::collection::vec(arb_term(), 1..40), q in arb_term(), long in 1usize..7, edits in 0usize..3) {
            let cfg = FuzzyConfig { max_edit_per_long_token: edits, long_token_min_len: long };
            let idx = TermIndex::from_terms("en", terms.iter().enumerate().map(|(i, t)| (t.as_str(), cui(i as u32 % 7), i % 2 == 0)));
            let query = normalize_term(&q);
            let scan: Vec<usize> = (0..idx.len()).filter(|&i| {
                let e = &idx.entries()[i].term;
                e.tokens.len() == query.tokens.len() && query.tokens.iter().zip(&e.tokens).all(|(a, b)| levenshtein(a, b) <= token_edit_budget(a, &cfg))
            }).collect();
            let got: Vec<_> = idx.fuzzy_lookup(&query, &cfg).into_iter().map(|c| (c.cui, c.matched_term.text)).collect();
            let want: Vec<_> = scan.into_iter().map(|i| (idx.entries()[i].cui, idx.entries()[i].term.text.clone())).collect();
            prop_assert_eq!(got, want);
        }
    }
}
