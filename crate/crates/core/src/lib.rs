//! Multilingual biomedical concept normalization.
//!
//! Mentions are linked to concept identifiers by a sequential candidate
//! search (target-language lexicon, then the English lexicon, then the English
//! lexicon after machine translation) followed by a disambiguation cascade.
//! The crate also contains a from-scratch character-level neural translator
//! and an evaluation harness producing micro-averaged precision, recall and
//! F1 per search depth.

pub mod eval;
pub mod index;
pub mod neuralmt;
pub mod pipeline;
pub mod terminology;
pub mod translator;

pub use eval::{EvalConfig, EvalReport, GoldDocument, Metrics};
pub use index::{Candidate, FuzzyConfig, MatchKind, NormalizedTerm, TermIndex};
pub use neuralmt::{ModelConfig, TrainingExample, TranslationModel};
pub use pipeline::{CandidateResult, DisambiguationConfig, Mention, Prediction, SearchLevel};
pub use terminology::{ConceptId, Lexicon, RelationGraph, TermRecord};
pub use translator::{DictionaryTranslator, NeuralTranslator, NoTranslator, Translator};
