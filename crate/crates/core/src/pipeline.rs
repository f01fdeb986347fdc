//! Sequential candidate search and the disambiguation cascade.
//!
//! Search tries, in order and stopping at the first level with candidates:
//! the mention's own language (ML), the English index with the untranslated
//! term (CL), and the English index with a translated term (BTM). Each level
//! runs exact lookup first and falls back to fuzzy lookup only when exact
//! lookup finds nothing.
//!
//! Disambiguation then narrows each mention's candidates by semantic group,
//! preferred label, document-level densest-subgraph peeling and finally the
//! smallest concept id. A step that would leave a mention without candidates
//! is skipped for that mention.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{build_index, normalize_term, Candidate, FuzzyConfig, TermIndex};
use crate::terminology::{smallest_cui, ConceptId, Lexicon, RelationGraph};
use crate::translator::Translator;

pub const PIVOT_LANGUAGE: &str = "en";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PipelineError {
    #[error("mention {0}: spans must be non-empty, ordered and non-overlapping")]
    BadSpans(String),
    #[error("mention {mention}: span {start}..{end} is outside the text or not on a character boundary")]
    SpanOutOfRange { mention: String, start: usize, end: usize },
    #[error("no index for language {0:?}")]
    UnknownLanguage(String),
    #[error("unknown search level {0:?}")]
    UnknownLevel(String),
}

/// An annotated, possibly discontiguous text span to normalize.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub doc_id: String,
    pub mention_id: String,
    /// Byte offsets into the document text.
    pub spans: Vec<(usize, usize)>,
    pub surface: String,
    pub language: String,
}

impl Mention {
    /// Builds a mention from document text; the surface is the span texts
    /// joined by single spaces.
    pub fn from_text(
        doc_id: impl Into<String>,
        mention_id: impl Into<String>,
        text: &str,
        spans: Vec<(usize, usize)>,
        language: impl Into<String>,
    ) -> Result<Self, PipelineError> {
        let mention_id = mention_id.into();
        check_spans(&mention_id, &spans)?;
        let mut parts = Vec::with_capacity(spans.len());
        for &(start, end) in &spans {
            let part = text.get(start..end).ok_or_else(|| PipelineError::SpanOutOfRange {
                mention: mention_id.clone(),
                start,
                end,
            })?;
            parts.push(part);
        }
        Ok(Self {
            doc_id: doc_id.into(),
            mention_id,
            surface: parts.join(" "),
            spans,
            language: language.into(),
        })
    }

    /// A free-standing term, e.g. from the command line, with one span
    /// covering the whole string.
    pub fn standalone(mention_id: impl Into<String>, term: &str, language: impl Into<String>) -> Self {
        Self {
            doc_id: String::new(),
            mention_id: mention_id.into(),
            spans: vec![(0, term.len())],
            surface: term.to_string(),
            language: language.into(),
        }
    }
}

fn check_spans(mention: &str, spans: &[(usize, usize)]) -> Result<(), PipelineError> {
    let ordered = spans.iter().all(|&(s, e)| s < e) && spans.windows(2).all(|w| w[0].1 <= w[1].0);
    if spans.is_empty() || !ordered {
        return Err(PipelineError::BadSpans(mention.to_string()));
    }
    Ok(())
}

/// Search depth that produced the candidates. `Unresolved` is printed as
/// `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SearchLevel {
    #[serde(rename = "ML")]
    Ml,
    #[serde(rename = "CL")]
    Cl,
    #[serde(rename = "BTM")]
    Btm,
    #[serde(rename = "None")]
    Unresolved,
}

impl SearchLevel {
    /// The three searchable depths, shallowest first.
    pub const SEARCHABLE: [SearchLevel; 3] = [SearchLevel::Ml, SearchLevel::Cl, SearchLevel::Btm];

    pub fn as_str(self) -> &'static str {
        match self {
            SearchLevel::Ml => "ML",
            SearchLevel::Cl => "CL",
            SearchLevel::Btm => "BTM",
            SearchLevel::Unresolved => "None",
        }
    }
}

impl fmt::Display for SearchLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SearchLevel {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ML" => Ok(SearchLevel::Ml),
            "CL" => Ok(SearchLevel::Cl),
            "BTM" => Ok(SearchLevel::Btm),
            "NONE" => Ok(SearchLevel::Unresolved),
            _ => Err(PipelineError::UnknownLevel(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub doc_id: String,
    pub mention_id: String,
    pub candidates: Vec<Candidate>,
    pub level: SearchLevel,
    /// The translation used, set only when `level` is BTM.
    pub translated_query: Option<String>,
}

impl CandidateResult {
    /// Distinct candidate concepts in ascending order.
    pub fn cuis(&self) -> Vec<ConceptId> {
        let set: BTreeSet<ConceptId> = self.candidates.iter().map(|c| c.cui).collect();
        set.into_iter().collect()
    }
}

/// Exact lookup, falling back to fuzzy lookup when nothing matches exactly.
pub fn lookup(index: &TermIndex, raw_query: &str, fuzzy: &FuzzyConfig) -> Vec<Candidate> {
    let query = normalize_term(raw_query);
    if query.is_empty() {
        return Vec::new();
    }
    let exact = index.exact_lookup(&query);
    if !exact.is_empty() {
        return exact;
    }
    index.fuzzy_lookup(&query, fuzzy)
}

pub fn sequential_search<T: Translator + ?Sized>(
    mention: &Mention,
    target_index: &TermIndex,
    english_index: &TermIndex,
    translator: &T,
    fuzzy: &FuzzyConfig,
) -> CandidateResult {
    search_mode_restricted(mention, target_index, english_index, translator, fuzzy, SearchLevel::Btm)
}

/// Sequential search truncated after `max_level`.
pub fn search_mode_restricted<T: Translator + ?Sized>(
    mention: &Mention,
    target_index: &TermIndex,
    english_index: &TermIndex,
    translator: &T,
    fuzzy: &FuzzyConfig,
    max_level: SearchLevel,
) -> CandidateResult {
    let result = |candidates: Vec<Candidate>, level, translated_query| CandidateResult {
        doc_id: mention.doc_id.clone(),
        mention_id: mention.mention_id.clone(),
        candidates,
        level,
        translated_query,
    };
    let query = mention.surface.as_str();

    let found = lookup(target_index, query, fuzzy);
    if !found.is_empty() {
        return result(found, SearchLevel::Ml, None);
    }
    if max_level >= SearchLevel::Cl {
        let found = lookup(english_index, query, fuzzy);
        if !found.is_empty() {
            return result(found, SearchLevel::Cl, None);
        }
    }
    if max_level >= SearchLevel::Btm {
        if let Some(translated) = translator.translate(query) {
            let found = lookup(english_index, &translated, fuzzy);
            if !found.is_empty() {
                return result(found, SearchLevel::Btm, Some(translated));
            }
        }
    }
    result(Vec::new(), SearchLevel::Unresolved, None)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisambiguationConfig {
    pub allowed_sem_groups: Option<BTreeSet<String>>,
    pub use_preferred_step: bool,
    pub use_graph_step: bool,
}

impl Default for DisambiguationConfig {
    fn default() -> Self {
        Self {
            allowed_sem_groups: None,
            use_preferred_step: true,
            use_graph_step: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub mention_id: String,
    pub cui: ConceptId,
    pub level: SearchLevel,
}

/// Keeps candidates whose concept carries an allowed semantic group. Returns
/// the input unchanged when nothing would survive or no filter is set.
pub fn filter_semantic(candidates: Vec<Candidate>, lexicon: &Lexicon, allowed: Option<&BTreeSet<String>>) -> Vec<Candidate> {
    let Some(allowed) = allowed else {
        return candidates;
    };
    let keep = |c: &Candidate| lexicon.sem_groups(c.cui).is_some_and(|groups| !groups.is_disjoint(allowed));
    if candidates.iter().any(keep) {
        candidates.into_iter().filter(keep).collect()
    } else {
        candidates
    }
}

/// Keeps candidates matched through a preferred label, if there are any.
pub fn prefer_preferred(candidates: Vec<Candidate>) -> Vec<Candidate> {
    if candidates.iter().any(|c| c.preferred) {
        candidates.into_iter().filter(|c| c.preferred).collect()
    } else {
        candidates
    }
}

/// Greedy minimum-degree peeling over the document's candidate graph.
///
/// Nodes are `(mention, cui)` pairs; two nodes are adjacent when they belong
/// to different mentions and their concepts are related. Only nodes of
/// mentions still holding two or more candidates are removable. The removable
/// node of lowest degree goes first (ties: largest cui, then largest mention
/// key). Peeling stops once no mention is ambiguous or every removable node
/// is isolated.
pub fn densest_subgraph_step<K>(
    doc_candidates: &BTreeMap<K, BTreeSet<ConceptId>>,
    relations: &RelationGraph,
) -> BTreeMap<K, BTreeSet<ConceptId>>
where
    K: Ord + Clone,
{
    let keys: Vec<&K> = doc_candidates.keys().collect();
    let mut nodes: Vec<(usize, ConceptId)> = Vec::new();
    for (m, set) in doc_candidates.values().enumerate() {
        nodes.extend(set.iter().map(|&c| (m, c)));
    }
    let mut remaining: Vec<usize> = doc_candidates.values().map(BTreeSet::len).collect();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    if !relations.is_empty() {
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                if nodes[i].0 != nodes[j].0 && relations.related(nodes[i].1, nodes[j].1) {
                    adjacency[i].push(j);
                    adjacency[j].push(i);
                }
            }
        }
    }
    let mut degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut alive = vec![true; nodes.len()];

    loop {
        let victim = (0..nodes.len())
            .filter(|&i| alive[i] && remaining[nodes[i].0] >= 2)
            .min_by(|&a, &b| {
                degree[a]
                    .cmp(&degree[b])
                    .then(nodes[b].1.cmp(&nodes[a].1))
                    .then(keys[nodes[b].0].cmp(keys[nodes[a].0]))
            });
        let Some(victim) = victim else { break };
        let any_connected = (0..nodes.len()).any(|i| alive[i] && remaining[nodes[i].0] >= 2 && degree[i] > 0);
        if !any_connected {
            break;
        }
        alive[victim] = false;
        remaining[nodes[victim].0] -= 1;
        for &n in &adjacency[victim] {
            if alive[n] {
                degree[n] -= 1;
            }
        }
    }

    let mut out: BTreeMap<K, BTreeSet<ConceptId>> = doc_candidates.keys().map(|k| (k.clone(), BTreeSet::new())).collect();
    for (i, &(m, c)) in nodes.iter().enumerate() {
        if alive[i] {
            out.get_mut(keys[m]).expect("key present").insert(c);
        }
    }
    out
}

/// Runs the four-step cascade over one document. Mentions without candidates
/// yield no prediction; every other mention yields exactly one, in input
/// order.
pub fn disambiguate_document(
    doc_results: &[CandidateResult],
    lexicon: &Lexicon,
    relations: &RelationGraph,
    cfg: &DisambiguationConfig,
) -> Vec<Prediction> {
    let mut sets: BTreeMap<(String, usize), BTreeSet<ConceptId>> = BTreeMap::new();
    for (i, r) in doc_results.iter().enumerate() {
        if r.candidates.is_empty() {
            continue;
        }
        let mut cands = filter_semantic(r.candidates.clone(), lexicon, cfg.allowed_sem_groups.as_ref());
        if cfg.use_preferred_step {
            cands = prefer_preferred(cands);
        }
        sets.insert((r.mention_id.clone(), i), cands.iter().map(|c| c.cui).collect());
    }
    if cfg.use_graph_step {
        sets = densest_subgraph_step(&sets, relations);
    }
    let mut chosen: HashMap<usize, ConceptId> = HashMap::new();
    for ((_, i), set) in &sets {
        chosen.insert(*i, smallest_cui(set.iter().copied()).expect("cascade keeps candidates"));
    }
    doc_results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            chosen.get(&i).map(|&cui| Prediction {
                doc_id: r.doc_id.clone(),
                mention_id: r.mention_id.clone(),
                cui,
                level: r.level,
            })
        })
        .collect()
}

/// Indexes for every lexicon language plus the search and disambiguation
/// settings; immutable and shareable across threads.
pub struct Normalizer {
    lexicon: Lexicon,
    relations: RelationGraph,
    indexes: BTreeMap<String, TermIndex>,
    english: TermIndex,
    translator: Box<dyn Translator>,
    pub fuzzy: FuzzyConfig,
    pub disambiguation: DisambiguationConfig,
}

impl Normalizer {
    /// Builds one index per lexicon language, in parallel.
    pub fn new(lexicon: Lexicon, relations: RelationGraph, translator: Box<dyn Translator>) -> Self {
        let langs: Vec<String> = lexicon.languages().iter().cloned().collect();
        let indexes: BTreeMap<String, TermIndex> = langs
            .par_iter()
            .map(|l| (l.clone(), build_index(&lexicon, l).expect("language taken from lexicon")))
            .collect();
        Self::with_indexes(lexicon, relations, indexes, translator)
    }

    pub fn with_indexes(
        lexicon: Lexicon,
        relations: RelationGraph,
        indexes: BTreeMap<String, TermIndex>,
        translator: Box<dyn Translator>,
    ) -> Self {
        let english = indexes
            .get(PIVOT_LANGUAGE)
            .cloned()
            .unwrap_or_else(|| TermIndex::from_terms(PIVOT_LANGUAGE, std::iter::empty::<(&str, ConceptId, bool)>()));
        Self {
            lexicon,
            relations,
            indexes,
            english,
            translator,
            fuzzy: FuzzyConfig::default(),
            disambiguation: DisambiguationConfig::default(),
        }
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn relations(&self) -> &RelationGraph {
        &self.relations
    }

    pub fn index(&self, lang: &str) -> Option<&TermIndex> {
        self.indexes.get(lang)
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.indexes.keys().map(String::as_str)
    }

    pub fn translator(&self) -> &dyn Translator {
        self.translator.as_ref()
    }

    pub fn search(&self, mention: &Mention, max_level: SearchLevel) -> Result<CandidateResult, PipelineError> {
        let target = self
            .indexes
            .get(&mention.language)
            .ok_or_else(|| PipelineError::UnknownLanguage(mention.language.clone()))?;
        Ok(search_mode_restricted(
            mention,
            target,
            &self.english,
            self.translator.as_ref(),
            &self.fuzzy,
            max_level,
        ))
    }

    /// Searches every mention of one document and disambiguates them jointly.
    pub fn normalize_document(
        &self,
        mentions: &[Mention],
        max_level: SearchLevel,
    ) -> Result<(Vec<CandidateResult>, Vec<Prediction>), PipelineError> {
        let results = mentions.iter().map(|m| self.search(m, max_level)).collect::<Result<Vec<_>, _>>()?;
        let preds = disambiguate_document(&results, &self.lexicon, &self.relations, &self.disambiguation);
        Ok((results, preds))
    }
}
