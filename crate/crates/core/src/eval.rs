//! Gold-standard corpora, scoring and the per-depth evaluation report.
//!
//! Corpora are directories of `<name>.txt` / `<name>.ann` standoff pairs plus
//! a `manifest.tsv` (`name<TAB>subcorpus<TAB>lang`). Scoring is micro-averaged
//! over `(mention, cui)` pairs: with one prediction per mention, a mention
//! with two gold concepts contributes at most one true positive and at least
//! one false negative.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::FuzzyConfig;
use crate::pipeline::{DisambiguationConfig, Mention, Normalizer, PipelineError, Prediction, SearchLevel};
use crate::terminology::{ConceptId, Lexicon, RelationGraph};
use crate::translator::Translator;

pub const MANIFEST: &str = "manifest.tsv";
pub const REPORT_HEADER: &str = "method\tsubcorpus\tP\tR\tF1\tresolved_ML\tresolved_CL\tresolved_BTM";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("{path}:{line}: annotation text {found:?} does not match spans {expected:?}")]
    OffsetMismatch {
        path: String,
        line: usize,
        expected: String,
        found: String,
    },
    #[error("prediction for unknown mention {doc_id}/{mention_id}")]
    UnknownMention { doc_id: String, mention_id: String },
    #[error("corpus {0} contains no documents")]
    EmptyCorpus(String),
    #[error("{path}: {source}")]
    Pipeline {
        path: String,
        #[source]
        source: PipelineError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldMention {
    pub mention: Mention,
    pub entity_type: String,
    pub gold_cuis: BTreeSet<ConceptId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldDocument {
    pub doc_id: String,
    pub text: String,
    pub mentions: Vec<GoldMention>,
    pub subcorpus: String,
    pub language: String,
}

impl GoldDocument {
    pub fn mentions(&self) -> Vec<Mention> {
        self.mentions.iter().map(|m| m.mention.clone()).collect()
    }
}

fn parse_spans(s: &str) -> Option<Vec<(usize, usize)>> {
    s.split(';')
        .map(|part| {
            let mut it = part.split_whitespace();
            let start = it.next()?.parse().ok()?;
            let end = it.next()?.parse().ok()?;
            it.next().is_none().then_some((start, end))
        })
        .collect()
}

/// Parses text-bound (`T`) and normalization (`N`) lines of a standoff file.
/// Other annotation kinds are ignored, as are text-bound annotations without
/// any normalization.
pub fn parse_standoff(
    doc_id: &str,
    text: &str,
    ann: &str,
    language: &str,
    subcorpus: &str,
    path_label: &str,
) -> Result<GoldDocument, EvalError> {
    let parse_err = |line: usize, reason: String| EvalError::Parse {
        path: path_label.to_string(),
        line,
        reason,
    };
    let mut order: Vec<String> = Vec::new();
    let mut spans_by_id: HashMap<String, (String, Mention)> = HashMap::new();
    let mut gold: HashMap<String, BTreeSet<ConceptId>> = HashMap::new();

    for (i, raw) in ann.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let id = fields.next().unwrap_or_default();
        if id.starts_with('T') {
            let meta = fields.next().ok_or_else(|| parse_err(line_no, "missing type and offsets".into()))?;
            let surface = fields.next().ok_or_else(|| parse_err(line_no, "missing annotation text".into()))?;
            let (etype, offsets) = meta.split_once(' ').ok_or_else(|| parse_err(line_no, "missing offsets".into()))?;
            let spans = parse_spans(offsets).ok_or_else(|| parse_err(line_no, format!("bad offsets {offsets:?}")))?;
            let mention = Mention::from_text(doc_id, id, text, spans, language).map_err(|e| match e {
                PipelineError::SpanOutOfRange { .. } => EvalError::OffsetMismatch {
                    path: path_label.to_string(),
                    line: line_no,
                    expected: offsets.to_string(),
                    found: surface.to_string(),
                },
                other => parse_err(line_no, other.to_string()),
            })?;
            if mention.surface != surface {
                return Err(EvalError::OffsetMismatch {
                    path: path_label.to_string(),
                    line: line_no,
                    expected: mention.surface,
                    found: surface.to_string(),
                });
            }
            if spans_by_id.insert(id.to_string(), (etype.to_string(), mention)).is_some() {
                return Err(parse_err(line_no, format!("duplicate annotation id {id}")));
            }
            order.push(id.to_string());
        } else if id.starts_with('N') {
            let body = fields.next().ok_or_else(|| parse_err(line_no, "missing reference".into()))?;
            let mut parts = body.split_whitespace();
            let (kind, target, reference) = (parts.next(), parts.next(), parts.next());
            if kind != Some("Reference") {
                return Err(parse_err(line_no, "expected 'Reference'".into()));
            }
            let target = target.ok_or_else(|| parse_err(line_no, "missing target id".into()))?;
            let cui = reference
                .and_then(|r| r.strip_prefix("CUI:").or_else(|| r.split_once(':').map(|x| x.1)))
                .and_then(|c| c.parse::<ConceptId>().ok())
                .ok_or_else(|| parse_err(line_no, format!("bad concept reference {reference:?}")))?;
            if !spans_by_id.contains_key(target) {
                return Err(parse_err(line_no, format!("reference to unknown annotation {target}")));
            }
            gold.entry(target.to_string()).or_default().insert(cui);
        }
    }

    let mentions = order
        .into_iter()
        .filter_map(|id| {
            let cuis = gold.remove(&id)?;
            let (entity_type, mention) = spans_by_id.remove(&id)?;
            Some(GoldMention {
                mention,
                entity_type,
                gold_cuis: cuis,
            })
        })
        .collect();
    Ok(GoldDocument {
        doc_id: doc_id.to_string(),
        text: text.to_string(),
        mentions,
        subcorpus: subcorpus.to_string(),
        language: language.to_string(),
    })
}

pub fn read_gold_standoff(ann_path: &Path, txt_path: &Path, language: &str, subcorpus: &str) -> Result<GoldDocument, EvalError> {
    let text = fs::read_to_string(txt_path).map_err(io_err(txt_path))?;
    let ann = fs::read_to_string(ann_path).map_err(io_err(ann_path))?;
    let doc_id = txt_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_standoff(&doc_id, &text, &ann, language, subcorpus, &ann_path.display().to_string())
}

/// Reads every document listed in `manifest.tsv`, in manifest order.
pub fn load_corpus(dir: &Path) -> Result<Vec<GoldDocument>, EvalError> {
    let manifest_path = dir.join(MANIFEST);
    let manifest = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in manifest.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let [name, subcorpus, lang] = fields[..] else {
            return Err(EvalError::Parse {
                path: manifest_path.display().to_string(),
                line: i + 1,
                reason: "expected name<TAB>subcorpus<TAB>lang".into(),
            });
        };
        if !seen.insert(name.to_string()) {
            return Err(EvalError::Parse {
                path: manifest_path.display().to_string(),
                line: i + 1,
                reason: format!("document {name} listed twice"),
            });
        }
        let txt: PathBuf = dir.join(format!("{name}.txt"));
        let ann: PathBuf = dir.join(format!("{name}.ann"));
        docs.push(read_gold_standoff(&ann, &txt, lang, subcorpus)?);
    }
    if docs.is_empty() {
        return Err(EvalError::EmptyCorpus(dir.display().to_string()));
    }
    Ok(docs)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

/// Micro-averaged pair-level scoring.
pub fn score(gold: &[GoldDocument], preds: &[Prediction]) -> Result<Metrics, EvalError> {
    let mut gold_sets: HashMap<(&str, &str), &BTreeSet<ConceptId>> = HashMap::new();
    let mut total_gold = 0usize;
    for doc in gold {
        for m in &doc.mentions {
            gold_sets.insert((doc.doc_id.as_str(), m.mention.mention_id.as_str()), &m.gold_cuis);
            total_gold += m.gold_cuis.len();
        }
    }
    let pairs: BTreeSet<(&str, &str, ConceptId)> = preds.iter().map(|p| (p.doc_id.as_str(), p.mention_id.as_str(), p.cui)).collect();
    let (mut tp, mut fp) = (0, 0);
    for (doc_id, mention_id, cui) in pairs {
        let gold = gold_sets.get(&(doc_id, mention_id)).ok_or_else(|| EvalError::UnknownMention {
            doc_id: doc_id.to_string(),
            mention_id: mention_id.to_string(),
        })?;
        if gold.contains(&cui) {
            tp += 1;
        } else {
            fp += 1;
        }
    }
    Ok(Metrics::from_counts(tp, fp, total_gold - tp))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub fuzzy: FuzzyConfig,
    pub disambiguation: DisambiguationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: SearchLevel,
    pub subcorpus: String,
    pub metrics: Metrics,
    /// Mentions resolved at ML, CL and BTM.
    pub resolved: [usize; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn row(&self, method: SearchLevel, subcorpus: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.subcorpus == subcorpus)
    }

    pub fn subcorpora(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.subcorpus.as_str()).collect();
        set.into_iter().collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}",
                r.method, r.subcorpus, r.metrics.precision, r.metrics.recall, r.metrics.f1, r.resolved[0], r.resolved[1], r.resolved[2]
            );
        }
        out
    }

    /// Methods down, subcorpora across, P/R/F1 per subcorpus.
    pub fn to_pretty(&self) -> String {
        let subs = self.subcorpora();
        let mut out = String::new();
        let _ = write!(out, "{:<8}", "");
        for s in &subs {
            let _ = write!(out, "| {:^24} ", s);
        }
        out.push('\n');
        let _ = write!(out, "{:<8}", "Method");
        for _ in &subs {
            let _ = write!(out, "| {:>7} {:>7} {:>7}  ", "P", "R", "F1");
        }
        out.push('\n');
        out.push_str(&"-".repeat(8 + 27 * subs.len()));
        out.push('\n');
        for level in SearchLevel::SEARCHABLE {
            let _ = write!(out, "{:<8}", level.as_str());
            for s in &subs {
                match self.row(level, s) {
                    Some(r) => {
                        let _ = write!(
                            out,
                            "| {:>7.3} {:>7.3} {:>7.3}  ",
                            r.metrics.precision, r.metrics.recall, r.metrics.f1
                        );
                    }
                    None => {
                        let _ = write!(out, "| {:>25}", "");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Predictions per search depth for one document.
type DocRun = Vec<(SearchLevel, Vec<Prediction>, [usize; 3])>;

fn run_document(doc: &GoldDocument, normalizer: &Normalizer) -> Result<DocRun, EvalError> {
    let mentions = doc.mentions();
    SearchLevel::SEARCHABLE
        .iter()
        .map(|&level| {
            let (results, preds) = normalizer
                .normalize_document(&mentions, level)
                .map_err(|source| EvalError::Pipeline {
                    path: doc.doc_id.clone(),
                    source,
                })?;
            let mut resolved = [0usize; 3];
            for r in &results {
                if let Some(i) = SearchLevel::SEARCHABLE.iter().position(|&l| l == r.level) {
                    resolved[i] += 1;
                }
            }
            Ok((level, preds, resolved))
        })
        .collect()
}

/// Runs ML, CL and BTM searches over every document (in parallel) and scores
/// each depth per subcorpus.
pub fn evaluate_documents(docs: &[GoldDocument], normalizer: &Normalizer) -> Result<EvalReport, EvalError> {
    let runs: Vec<DocRun> = docs.par_iter().map(|d| run_document(d, normalizer)).collect::<Result<_, _>>()?;

    let mut by_sub: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in docs.iter().enumerate() {
        by_sub.entry(d.subcorpus.as_str()).or_default().push(i);
    }
    let mut rows = Vec::new();
    for (sub, ids) in by_sub {
        let gold: Vec<GoldDocument> = ids.iter().map(|&i| docs[i].clone()).collect();
        for (li, &level) in SearchLevel::SEARCHABLE.iter().enumerate() {
            let mut preds = Vec::new();
            let mut resolved = [0usize; 3];
            for &i in &ids {
                let (l, p, r) = &runs[i][li];
                debug_assert_eq!(*l, level);
                preds.extend(p.iter().cloned());
                for k in 0..3 {
                    resolved[k] += r[k];
                }
            }
            rows.push(ReportRow {
                method: level,
                subcorpus: sub.to_string(),
                metrics: score(&gold, &preds)?,
                resolved,
            });
        }
    }
    Ok(EvalReport { rows })
}

pub fn run_evaluation(
    corpus_dir: &Path,
    lexicon: Lexicon,
    relations: RelationGraph,
    translator: Box<dyn Translator>,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let docs = load_corpus(corpus_dir)?;
    let mut normalizer = Normalizer::new(lexicon, relations, translator);
    normalizer.fuzzy = cfg.fuzzy;
    normalizer.disambiguation = cfg.disambiguation.clone();
    evaluate_documents(&docs, &normalizer)
}
