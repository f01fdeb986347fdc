//! Multilingual concept lexicon and concept-relation graph.
//!
//! The lexicon is a flat TSV of concept names (`cui, lang, term, preferred,
//! sem_group`); the relation graph is an undirected set of CUI pairs used by
//! the document-level disambiguation step.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fraction of malformed lexicon rows tolerated before loading fails.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

/// Languages accepted when the caller does not restrict them.
pub const DEFAULT_LANGUAGES: [&str; 5] = ["en", "fr", "es", "nl", "de"];

/// Concept unique identifier: `C` followed by seven decimal digits.
///
/// Ordering is numeric on the digit suffix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConceptId(u32);

impl ConceptId {
    pub const MAX: u32 = 9_999_999;

    pub fn new(numeric_value: u32) -> Option<Self> {
        (numeric_value <= Self::MAX).then_some(Self(numeric_value))
    }

    pub fn numeric_value(self) -> u32 {
        self.0
    }

    pub fn raw(self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{:07}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid concept id {0:?}: expected 'C' followed by 7 digits")]
pub struct ParseConceptIdError(pub String);

impl FromStr for ConceptId {
    type Err = ParseConceptIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s
            .strip_prefix('C')
            .filter(|d| d.len() == 7 && d.bytes().all(|b| b.is_ascii_digit()))
            .ok_or_else(|| ParseConceptIdError(s.to_string()))?;
        // seven ASCII digits always fit
        Ok(Self(digits.parse().expect("seven digits")))
    }
}

impl Serialize for ConceptId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ConceptId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One concept-name row of the lexicon.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TermRecord {
    pub cui: ConceptId,
    pub lang: String,
    pub term: String,
    pub preferred: bool,
    pub sem_group: String,
}

/// Everything the lexicon knows about a single concept.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConceptView {
    /// Indices into [`Lexicon::records`].
    pub record_ids: Vec<usize>,
    pub sem_groups: BTreeSet<String>,
    /// Preferred terms keyed by language.
    pub preferred: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    records: Vec<TermRecord>,
    by_cui: BTreeMap<ConceptId, ConceptView>,
    languages: BTreeSet<String>,
}

impl Lexicon {
    /// Builds a lexicon from already validated records. Records are sorted by
    /// `(cui, lang, term)` so iteration order does not depend on input order.
    pub fn from_records(mut records: Vec<TermRecord>) -> Result<Self, LexiconError> {
        if records.is_empty() {
            return Err(LexiconError::Empty);
        }
        records.sort_by(|a, b| {
            (a.cui, &a.lang, &a.term, a.preferred, &a.sem_group).cmp(&(b.cui, &b.lang, &b.term, b.preferred, &b.sem_group))
        });
        let mut by_cui: BTreeMap<ConceptId, ConceptView> = BTreeMap::new();
        let mut languages = BTreeSet::new();
        for (i, rec) in records.iter().enumerate() {
            let view = by_cui.entry(rec.cui).or_default();
            view.record_ids.push(i);
            if !rec.sem_group.is_empty() {
                view.sem_groups.insert(rec.sem_group.clone());
            }
            if rec.preferred {
                view.preferred.entry(rec.lang.clone()).or_default().push(rec.term.clone());
            }
            languages.insert(rec.lang.clone());
        }
        Ok(Self {
            records,
            by_cui,
            languages,
        })
    }

    pub fn records(&self) -> &[TermRecord] {
        &self.records
    }

    pub fn languages(&self) -> &BTreeSet<String> {
        &self.languages
    }

    pub fn concept(&self, cui: ConceptId) -> Option<&ConceptView> {
        self.by_cui.get(&cui)
    }

    pub fn contains(&self, cui: ConceptId) -> bool {
        self.by_cui.contains_key(&cui)
    }

    pub fn concept_count(&self) -> usize {
        self.by_cui.len()
    }

    pub fn concepts(&self) -> impl Iterator<Item = (ConceptId, &ConceptView)> {
        self.by_cui.iter().map(|(c, v)| (*c, v))
    }

    pub fn records_for_language<'a>(&'a self, lang: &'a str) -> impl Iterator<Item = &'a TermRecord> {
        self.records.iter().filter(move |r| r.lang == lang)
    }

    pub fn sem_groups(&self, cui: ConceptId) -> Option<&BTreeSet<String>> {
        self.by_cui.get(&cui).map(|v| &v.sem_groups)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedRow {
    pub line_no: usize,
    pub reason: String,
}

impl fmt::Display for MalformedRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line_no, self.reason)
    }
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("cannot read lexicon {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("empty lexicon")]
    Empty,
    #[error("{bad} of {total} lexicon rows are malformed (first: {first})")]
    TooManyMalformed { bad: usize, total: usize, first: MalformedRow },
}

/// A loaded lexicon together with the rows that were skipped.
#[derive(Debug, Clone)]
pub struct LoadedLexicon {
    pub lexicon: Lexicon,
    pub malformed: Vec<MalformedRow>,
}

fn parse_lexicon_row(line: &str, expected_langs: &BTreeSet<String>) -> Result<TermRecord, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return Err(format!("expected 5 fields, found {}", fields.len()));
    }
    let cui: ConceptId = fields[0].trim().parse().map_err(|_| "bad cui".to_string())?;
    let lang = fields[1].trim();
    if !expected_langs.contains(lang) {
        return Err(format!("unknown language {lang:?}"));
    }
    let term = fields[2].trim();
    if term.is_empty() {
        return Err("empty term".into());
    }
    let preferred = match fields[3].trim() {
        "1" => true,
        "0" => false,
        other => return Err(format!("bad preferred flag {other:?}")),
    };
    Ok(TermRecord {
        cui,
        lang: lang.to_string(),
        term: term.to_string(),
        preferred,
        sem_group: fields[4].trim().to_string(),
    })
}

/// Parses lexicon TSV text. See [`load_lexicon`].
pub fn parse_lexicon(text: &str, expected_langs: &BTreeSet<String>) -> Result<LoadedLexicon, LexiconError> {
    let mut records = Vec::new();
    let mut malformed = Vec::new();
    let mut total = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        // An optional column header may precede the first data row.
        if total == 0 && line.split('\t').next() == Some("cui") {
            continue;
        }
        total += 1;
        match parse_lexicon_row(line, expected_langs) {
            Ok(rec) => records.push(rec),
            Err(reason) => malformed.push(MalformedRow { line_no: i + 1, reason }),
        }
    }
    if total == 0 {
        return Err(LexiconError::Empty);
    }
    if malformed.len() as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(LexiconError::TooManyMalformed {
            bad: malformed.len(),
            total,
            first: malformed[0].clone(),
        });
    }
    Ok(LoadedLexicon {
        lexicon: Lexicon::from_records(records)?,
        malformed,
    })
}

/// Loads a lexicon TSV file (`cui<TAB>lang<TAB>term<TAB>preferred<TAB>sem_group`).
/// A leading header row whose first field is `cui` is skipped.
///
/// Malformed rows are skipped and reported when they make up at most 1% of the
/// data rows; above that the whole load fails.
pub fn load_lexicon(path: impl AsRef<Path>, expected_langs: &BTreeSet<String>) -> Result<LoadedLexicon, LexiconError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_lexicon(&text, expected_langs)
}

pub fn default_languages() -> BTreeSet<String> {
    DEFAULT_LANGUAGES.iter().map(|s| s.to_string()).collect()
}

/// Undirected concept-relation graph without self-loops.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelationGraph {
    edges: BTreeSet<(ConceptId, ConceptId)>,
    adjacency: HashMap<ConceptId, HashSet<ConceptId>>,
}

impl RelationGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts the canonical form of `{a, b}`. Returns false for self-loops and
    /// edges already present.
    pub fn insert(&mut self, a: ConceptId, b: ConceptId) -> bool {
        if a == b {
            return false;
        }
        let key = if a < b { (a, b) } else { (b, a) };
        if !self.edges.insert(key) {
            return false;
        }
        self.adjacency.entry(a).or_default().insert(b);
        self.adjacency.entry(b).or_default().insert(a);
        true
    }

    pub fn related(&self, a: ConceptId, b: ConceptId) -> bool {
        self.adjacency.get(&a).is_some_and(|n| n.contains(&b))
    }

    pub fn edges(&self) -> impl Iterator<Item = (ConceptId, ConceptId)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

impl FromIterator<(ConceptId, ConceptId)> for RelationGraph {
    fn from_iter<I: IntoIterator<Item = (ConceptId, ConceptId)>>(iter: I) -> Self {
        let mut g = Self::new();
        for (a, b) in iter {
            g.insert(a, b);
        }
        g
    }
}

/// Counts of relation rows that did not become edges.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RelationStats {
    pub edges: usize,
    pub duplicates: usize,
    pub self_loops: usize,
    pub unknown_concept: usize,
    pub malformed: usize,
}

#[derive(Debug, Error)]
#[error("cannot read relations {path}: {source}")]
pub struct RelationsError {
    pub path: String,
    #[source]
    pub source: std::io::Error,
}

pub fn parse_relations(text: &str, lexicon: &Lexicon) -> (RelationGraph, RelationStats) {
    let mut graph = RelationGraph::new();
    let mut stats = RelationStats::default();
    for line in text.lines() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let parsed = match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), None) => a.trim().parse::<ConceptId>().ok().zip(b.trim().parse().ok()),
            _ => None,
        };
        let Some((a, b)) = parsed else {
            stats.malformed += 1;
            continue;
        };
        if a == b {
            stats.self_loops += 1;
        } else if !lexicon.contains(a) || !lexicon.contains(b) {
            stats.unknown_concept += 1;
        } else if !graph.insert(a, b) {
            stats.duplicates += 1;
        }
    }
    stats.edges = graph.edge_count();
    (graph, stats)
}

/// Loads `cui1<TAB>cui2` rows, keeping only edges between concepts known to
/// the lexicon.
pub fn load_relations(path: impl AsRef<Path>, lexicon: &Lexicon) -> Result<(RelationGraph, RelationStats), RelationsError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| RelationsError {
        path: path.display().to_string(),
        source,
    })?;
    Ok(parse_relations(&text, lexicon))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("empty candidate set")]
pub struct EmptyCandidates;

pub fn smallest_cui<I>(candidates: I) -> Result<ConceptId, EmptyCandidates>
where
    I: IntoIterator<Item = ConceptId>,
{
    candidates.into_iter().min().ok_or(EmptyCandidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cui(s: &str) -> ConceptId {
        s.parse().unwrap()
    }

    fn langs(l: &[&str]) -> BTreeSet<String> {
        l.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn concept_id_parse_and_display() {
        let c = cui("C0018681");
        assert_eq!(c.numeric_value(), 18681);
        assert_eq!(c.raw(), "C0018681");
        for bad in ["X123", "C123", "C12345678", "c0000001", "C00000a1", ""] {
            assert!(bad.parse::<ConceptId>().is_err(), "{bad}");
        }
    }

    #[test]
    fn two_language_lexicon() {
        let text = "C0000001\ten\theadache\t1\tDISO\nC0000001\tfr\tcéphalée\t1\tDISO\n";
        let loaded = parse_lexicon(text, &langs(&["en", "fr"])).unwrap();
        assert_eq!(loaded.lexicon.concept_count(), 1);
        assert_eq!(loaded.lexicon.records().len(), 2);
        assert_eq!(loaded.lexicon.languages(), &langs(&["en", "fr"]));
        assert!(loaded.malformed.is_empty());
        let view = loaded.lexicon.concept(cui("C0000001")).unwrap();
        assert_eq!(view.preferred["fr"], vec!["céphalée".to_string()]);
    }

    #[test]
    fn leading_header_row_is_skipped() {
        let text = "cui\tlang\tterm\tpreferred\tsem_group\nC0000001\ten\theadache\t1\tDISO\n";
        let loaded = parse_lexicon(text, &langs(&["en"])).unwrap();
        assert_eq!(loaded.lexicon.records().len(), 1);
        assert!(loaded.malformed.is_empty());
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(parse_lexicon("", &default_languages()), Err(LexiconError::Empty)));
        assert!(matches!(
            parse_lexicon("# only a comment\n\n", &default_languages()),
            Err(LexiconError::Empty)
        ));
    }

    #[test]
    fn bad_cui_row_is_reported() {
        let mut text = String::new();
        for i in 1..=100 {
            text.push_str(&format!("C{i:07}\ten\tterm {i}\t1\tDISO\n"));
        }
        text.push_str("X123\ten\tbroken\t1\tDISO\n");
        let loaded = parse_lexicon(&text, &default_languages()).unwrap();
        assert_eq!(loaded.malformed.len(), 1);
        assert_eq!(loaded.malformed[0].reason, "bad cui");
        assert_eq!(loaded.malformed[0].line_no, 101);
        assert_eq!(loaded.lexicon.concept_count(), 100);
    }

    #[test]
    fn too_many_bad_rows_fail() {
        let text = "C0000001\ten\tok\t1\t\nX1\ten\tbad\t1\t\n";
        assert!(matches!(
            parse_lexicon(text, &default_languages()),
            Err(LexiconError::TooManyMalformed { bad: 1, total: 2, .. })
        ));
    }

    #[test]
    fn row_level_validation() {
        let l = default_languages();
        assert!(parse_lexicon_row("C0000001\txx\tterm\t1\t", &l).is_err());
        assert!(parse_lexicon_row("C0000001\ten\t   \t1\t", &l).is_err());
        assert!(parse_lexicon_row("C0000001\ten\tterm\tyes\t", &l).is_err());
        assert!(parse_lexicon_row("C0000001\ten\tterm\t1", &l).is_err());
        let ok = parse_lexicon_row("C0000001\ten\tterm\t0\t", &l).unwrap();
        assert!(!ok.preferred);
        assert_eq!(ok.sem_group, "");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_lexicon("/definitely/not/here.tsv", &default_languages()).unwrap_err();
        assert!(matches!(err, LexiconError::Io { .. }));
    }

    fn small_lexicon() -> Lexicon {
        let text = "C0000001\ten\ta\t1\t\nC0000002\ten\tb\t1\t\nC0000003\ten\tc\t1\t\n";
        parse_lexicon(text, &default_languages()).unwrap().lexicon
    }

    #[test]
    fn relations_canonicalize() {
        let lex = small_lexicon();
        let (g, stats) = parse_relations("C0000001\tC0000002\nC0000002\tC0000001\n", &lex);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(stats.duplicates, 1);
        assert!(g.related(cui("C0000002"), cui("C0000001")));
        assert_eq!(g.edges().next(), Some((cui("C0000001"), cui("C0000002"))));
    }

    #[test]
    fn relations_drop_self_loops_and_unknowns() {
        let lex = small_lexicon();
        let (g, stats) = parse_relations("C0000001\tC0000001\nC0000001\tC9999999\n# c\nbogus\n", &lex);
        assert_eq!(g.edge_count(), 0);
        assert_eq!(stats.self_loops, 1);
        assert_eq!(stats.unknown_concept, 1);
        assert_eq!(stats.malformed, 1);
    }

    #[test]
    fn smallest_cui_examples() {
        assert_eq!(smallest_cui([cui("C0027051"), cui("C0018799")]), Ok(cui("C0018799")));
        assert_eq!(smallest_cui([cui("C0000001")]), Ok(cui("C0000001")));
        assert_eq!(
            smallest_cui([cui("C1234567"), cui("C0123456"), cui("C0123457")]),
            Ok(cui("C0123456"))
        );
        assert_eq!(smallest_cui(Vec::new()), Err(EmptyCandidates));
    }

    proptest! {
        #[test]
        fn concept_id_order_is_numeric(a in 0u32..=ConceptId::MAX, b in 0u32..=ConceptId::MAX) {
            let (ca, cb) = (ConceptId::new(a).unwrap(), ConceptId::new(b).unwrap());
            prop_assert_eq!(ca.cmp(&cb), a.cmp(&b));
            prop_assert_eq!(ca.raw().parse::<ConceptId>().unwrap(), ca);
        }

        #[test]
        fn lexicon_is_order_independent(mut rows in proptest::collection::vec((1u32..50, 0usize..3, "[a-z]{1,6}", any::<bool>()), 1..40)) {
            let langs = ["en", "fr", "de"];
            let render = |rows: &[(u32, usize, String, bool)]| {
                rows.iter()
                    .map(|(c, l, t, p)| format!("C{c:07}\t{}\t{t}\t{}\tDISO\n", langs[*l], *p as u8))
                    .collect::<String>()
            };
            let a = parse_lexicon(&render(&rows), &default_languages()).unwrap().lexicon;
            rows.reverse();
            let b = parse_lexicon(&render(&rows), &default_languages()).unwrap().lexicon;
            prop_assert_eq!(a, b);
        }

        #[test]
        fn relations_idempotent_under_duplication(pairs in proptest::collection::vec((1u32..4, 1u32..4), 0..12)) {
            let lex = small_lexicon();
            let once: String = pairs.iter().map(|(a, b)| format!("C{a:07}\tC{b:07}\n")).collect();
            let flipped: String = pairs.iter().map(|(a, b)| format!("C{b:07}\tC{a:07}\nC{a:07}\tC{b:07}\n")).collect();
            prop_assert_eq!(parse_relations(&once, &lex).0, parse_relations(&flipped, &lex).0);
        }
    }
}
