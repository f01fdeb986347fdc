//! Term index checked against a brute-force oracle written from the matching
//! rules alone: lowercase, collapse whitespace, split into alphanumeric runs,
//! same token count, per-position edit distance within 1 for query tokens of
//! five or more codepoints and 0 otherwise.

use std::collections::BTreeSet;

use normlex_core::index::{normalize_term, read_index_cache, write_index_cache};
use normlex_core::{ConceptId, FuzzyConfig, TermIndex};
use proptest::prelude::*;

fn oracle_tokens(s: &str) -> Vec<String> {
    let lower = s.to_lowercase();
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in lower.chars() {
        if c.is_alphanumeric() {
            cur.push(c);
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn oracle_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

fn oracle_fuzzy(terms: &[(String, ConceptId)], query: &str) -> BTreeSet<(String, ConceptId)> {
    let q = oracle_tokens(query);
    if q.is_empty() {
        return BTreeSet::new();
    }
    terms
        .iter()
        .filter(|(t, _)| {
            let e = oracle_tokens(t);
            e.len() == q.len()
                && q.iter().zip(&e).all(|(qt, et)| {
                    let budget = if qt.chars().count() >= 5 { 1 } else { 0 };
                    oracle_distance(qt, et) <= budget
                })
        })
        .map(|(t, c)| (t.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" "), *c))
        .collect()
}

fn index_of(terms: &[(String, ConceptId)]) -> TermIndex {
    TermIndex::from_terms("en", terms.iter().map(|(t, c)| (t.as_str(), *c, false)))
}

fn actual_fuzzy(index: &TermIndex, query: &str) -> BTreeSet<(String, ConceptId)> {
    index
        .fuzzy_lookup(&normalize_term(query), &FuzzyConfig::default())
        .into_iter()
        .map(|c| (c.matched_term.text, c.cui))
        .collect()
}

fn word() -> impl Strategy<Value = String> {
    prop::string::string_regex("[abcé]{1,7}").unwrap()
}

fn term() -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 1..=3).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fuzzy_lookup_matches_oracle(
        entries in prop::collection::vec((term(), 1u32..20), 1..40),
        queries in prop::collection::vec(term(), 1..10),
    ) {
        let terms: Vec<(String, ConceptId)> = entries.into_iter().map(|(t, c)| (t, ConceptId::new(c).unwrap())).collect();
        let index = index_of(&terms);
        for q in queries.iter().chain(terms.iter().map(|(t, _)| t)) {
            prop_assert_eq!(actual_fuzzy(&index, q), oracle_fuzzy(&terms, q), "query {:?}", q);
        }
    }

    #[test]
    fn exact_hits_are_fuzzy_hits(entries in prop::collection::vec((term(), 1u32..20), 1..30)) {
        let terms: Vec<(String, ConceptId)> = entries.into_iter().map(|(t, c)| (t, ConceptId::new(c).unwrap())).collect();
        let index = index_of(&terms);
        for (t, _) in &terms {
            let q = normalize_term(t);
            let exact: BTreeSet<_> = index.exact_lookup(&q).into_iter().map(|c| c.cui).collect();
            let fuzzy: BTreeSet<_> = index.fuzzy_lookup(&q, &FuzzyConfig::default()).into_iter().map(|c| c.cui).collect();
            prop_assert!(!exact.is_empty());
            prop_assert!(exact.is_subset(&fuzzy));
        }
    }

    #[test]
    fn cache_round_trip_preserves_lookups(entries in prop::collection::vec((term(), 1u32..20, any::<bool>()), 1..30)) {
        let index = TermIndex::from_terms("fr", entries.iter().map(|(t, c, p)| (t.as_str(), ConceptId::new(*c).unwrap(), *p)));
        let bytes = write_index_cache(&index, "abc123");
        let (back, digest) = read_index_cache(&bytes).unwrap();
        prop_assert_eq!(digest, "abc123");
        prop_assert_eq!(&back, &index);
        prop_assert_eq!(write_index_cache(&back, "abc123"), bytes);
    }
}

#[test]
fn short_tokens_get_no_edit_budget() {
    let c = ConceptId::new(1).unwrap();
    let index = TermIndex::from_terms("en", [("gout", c, true), ("fevers", c, true)]);
    assert!(actual_fuzzy(&index, "gaut").is_empty());
    assert_eq!(actual_fuzzy(&index, "fever").len(), 1);
    assert_eq!(actual_fuzzy(&index, "FEVERS").len(), 1);
}

#[test]
fn token_counts_must_agree() {
    let c = ConceptId::new(1).unwrap();
    let index = TermIndex::from_terms("en", [("heart failure", c, true)]);
    assert!(actual_fuzzy(&index, "heartfailure").is_empty());
    assert_eq!(actual_fuzzy(&index, "heart  failures").len(), 1);
}

#[test]
fn corrupted_cache_is_rejected() {
    let c = ConceptId::new(7).unwrap();
    let index = TermIndex::from_terms("en", [("fever", c, true)]);
    let mut bytes = write_index_cache(&index, "d");
    bytes[0] = b'X';
    assert!(read_index_cache(&bytes).is_err());
    let bytes = write_index_cache(&index, "d");
    assert!(read_index_cache(&bytes[..bytes.len() - 3]).is_err());
}
