use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use normlex_core::eval::{evaluate_documents, load_corpus};
use normlex_core::index::{build_index, content_digest, load_index_cache, save_index_cache};
use normlex_core::neuralmt::{self, load_model, save_model, split_dev, train_with, ModelConfig};
use normlex_core::pipeline::Normalizer;
use normlex_core::terminology::{default_languages, load_lexicon, load_relations};
use normlex_core::{
    DictionaryTranslator, Lexicon, Mention, NeuralTranslator, NoTranslator, RelationGraph, SearchLevel, TermIndex, Translator,
};

use crate::args::{
    BuildIndexArgs, EvaluateArgs, LexiconArgs, NormalizeArgs, PipelineArgs, Preset, TrainArgs, TranslateArgs, TranslatorKind,
};

pub const CACHE_ENV: &str = "NORMLEX_CACHE_DIR";

/// Bad flag combinations; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} {} does not exist or is not a file", path.display());
    }
    Ok(())
}

pub struct LoadedLexicon {
    pub lexicon: Lexicon,
    pub digest: String,
}

pub fn load_lexicon_args(args: &LexiconArgs, err: &mut dyn Write) -> Result<(LoadedLexicon, RelationGraph)> {
    require_file(&args.lexicon, "lexicon")?;
    if let Some(rel) = &args.relations {
        require_file(rel, "relations file")?;
    }
    let bytes = fs::read(&args.lexicon).with_context(|| format!("reading {}", args.lexicon.display()))?;
    let loaded = load_lexicon(&args.lexicon, &default_languages())?;
    if !loaded.malformed.is_empty() {
        writeln!(err, "warning: skipped {} malformed lexicon rows", loaded.malformed.len())?;
    }
    let relations = match &args.relations {
        Some(path) => {
            let (graph, stats) = load_relations(path, &loaded.lexicon)?;
            if stats.malformed + stats.unknown_concept > 0 {
                writeln!(
                    err,
                    "warning: skipped {} malformed and {} unknown-concept relation rows",
                    stats.malformed, stats.unknown_concept
                )?;
            }
            graph
        }
        None => RelationGraph::new(),
    };
    Ok((
        LoadedLexicon {
            lexicon: loaded.lexicon,
            digest: content_digest(&bytes),
        },
        relations,
    ))
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn cache_path(dir: &Path, lang: &str) -> PathBuf {
    dir.join(format!("{lang}.nlx"))
}

/// Indexes for every lexicon language, reusing caches whose digest matches
/// the lexicon and refreshing the others.
fn indexes_for(lex: &LoadedLexicon, cache: Option<&Path>, err: &mut dyn Write) -> Result<BTreeMap<String, TermIndex>> {
    let mut out = BTreeMap::new();
    for lang in lex.lexicon.languages() {
        let cached = cache.and_then(|dir| load_index_cache(cache_path(dir, lang)).ok());
        let index = match cached {
            Some((index, digest)) if digest == lex.digest && index.lang() == lang => index,
            _ => {
                let index = build_index(&lex.lexicon, lang)?;
                if let Some(dir) = cache {
                    if let Err(e) = fs::create_dir_all(dir)
                        .map_err(anyhow::Error::from)
                        .and_then(|_| save_index_cache(&index, &lex.digest, cache_path(dir, lang)).map_err(Into::into))
                    {
                        writeln!(err, "warning: could not write index cache for {lang}: {e}")?;
                    }
                }
                index
            }
        };
        out.insert(lang.clone(), index);
    }
    Ok(out)
}

fn translator_for(args: &PipelineArgs) -> Result<Box<dyn Translator>> {
    Ok(match args.translator {
        TranslatorKind::None => Box::new(NoTranslator),
        TranslatorKind::Dictionary => {
            let path = args.dict.as_ref().ok_or_else(|| usage("--translator dictionary needs --dict"))?;
            require_file(path, "dictionary")?;
            Box::new(DictionaryTranslator::load(path)?)
        }
        TranslatorKind::Neural => {
            let path = args.model.as_ref().ok_or_else(|| usage("--translator neural needs --model"))?;
            require_file(path, "model")?;
            let model = load_model(path).with_context(|| format!("loading model {}", path.display()))?;
            Box::new(NeuralTranslator::new(model))
        }
    })
}

pub fn build_normalizer(args: &PipelineArgs, err: &mut dyn Write) -> Result<Normalizer> {
    // Check every path before loading anything large.
    match args.translator {
        TranslatorKind::Dictionary if args.dict.is_none() => return Err(usage("--translator dictionary needs --dict")),
        TranslatorKind::Neural if args.model.is_none() => return Err(usage("--translator neural needs --model")),
        _ => {}
    }
    for path in [&args.dict, &args.model].into_iter().flatten() {
        require_file(path, "input")?;
    }
    let (lex, relations) = load_lexicon_args(&args.lexicon, err)?;
    let translator = translator_for(args)?;
    let indexes = indexes_for(&lex, cache_dir().as_deref(), err)?;
    let mut normalizer = Normalizer::with_indexes(lex.lexicon, relations, indexes, translator);
    if !args.sem_groups.is_empty() {
        normalizer.disambiguation.allowed_sem_groups = Some(args.sem_groups.iter().cloned().collect::<BTreeSet<_>>());
    }
    Ok(normalizer)
}

pub fn cmd_build_index(args: &BuildIndexArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let dir = args
        .out
        .clone()
        .or_else(cache_dir)
        .ok_or_else(|| usage(format!("no cache directory: pass --out or set {CACHE_ENV}")))?;
    let (lex, relations) = load_lexicon_args(&args.lexicon, err)?;
    let langs: Vec<String> = if args.lang.is_empty() {
        lex.lexicon.languages().iter().cloned().collect()
    } else {
        args.lang.clone()
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    writeln!(out, "lang\tterms\tkeys\tconcepts")?;
    for lang in &langs {
        let index = build_index(&lex.lexicon, lang)?;
        save_index_cache(&index, &lex.digest, cache_path(&dir, lang))?;
        writeln!(
            out,
            "{lang}\t{}\t{}\t{}",
            index.len(),
            index.exact_key_count(),
            index.concept_count()
        )?;
    }
    writeln!(
        err,
        "{} concepts, {} relations; caches in {}",
        lex.lexicon.concept_count(),
        relations.edge_count(),
        dir.display()
    )?;
    Ok(())
}

fn read_lines(path: Option<&Path>, stdin: &mut dyn BufRead) -> Result<Vec<String>> {
    let text = match path {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => {
            let mut s = String::new();
            stdin.read_to_string(&mut s)?;
            s
        }
    };
    Ok(text
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .filter(|l| !l.trim().is_empty())
        .collect())
}

pub fn cmd_normalize(args: &NormalizeArgs, stdin: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    if let Some(p) = &args.input {
        require_file(p, "input")?;
    }
    let normalizer = build_normalizer(&args.pipeline, err)?;
    if normalizer.index(&args.lang).is_none() {
        bail!("the lexicon has no {} terms", args.lang);
    }
    let terms = if !args.terms.is_empty() {
        args.terms.clone()
    } else {
        read_lines(args.input.as_deref(), stdin)?
    };

    let mut buf = Vec::new();
    writeln!(buf, "term\tlevel\tmatched\tcandidates\tcui")?;
    for (i, term) in terms.iter().enumerate() {
        // Each term is its own document: no cross-term disambiguation.
        let mention = Mention::standalone(format!("q{i}"), term, args.lang.clone());
        let (results, preds) = normalizer.normalize_document(std::slice::from_ref(&mention), args.pipeline.max_level)?;
        let result = &results[0];
        let matched: BTreeSet<&str> = result.candidates.iter().map(|c| c.matched_term.text.as_str()).collect();
        let cuis: Vec<String> = result.cuis().iter().map(ToString::to_string).collect();
        let cui = preds.first().map(|p| p.cui.to_string()).unwrap_or_default();
        writeln!(
            buf,
            "{term}\t{}\t{}\t{}\t{cui}",
            result.level,
            matched.into_iter().collect::<Vec<_>>().join("|"),
            cuis.join("|")
        )?;
    }
    match &args.out {
        Some(path) => fs::write(path, &buf).with_context(|| format!("writing {}", path.display()))?,
        None => out.write_all(&buf)?,
    }
    Ok(())
}

pub fn cmd_train_mt(args: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    require_file(&args.train, "training corpus")?;
    if let Some(dev) = &args.dev {
        require_file(dev, "development corpus")?;
    }
    if !(0.0..1.0).contains(&args.dev_fraction) {
        return Err(usage("--dev-fraction must be in [0, 1)"));
    }
    let mut config = match args.preset {
        Preset::Reference => ModelConfig::default(),
        Preset::Toy => ModelConfig::toy(),
    };
    config.seed = args.seed;
    if let Some(e) = args.epochs {
        config.max_epochs = e;
    }
    if let Some(lr) = args.lr {
        config.initial_lr = lr;
    }
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;

    let examples = neuralmt::load_parallel_corpus(&args.train).with_context(|| format!("reading {}", args.train.display()))?;
    let (train, dev) = match &args.dev {
        Some(path) => (
            examples,
            neuralmt::load_parallel_corpus(path).with_context(|| format!("reading {}", path.display()))?,
        ),
        None => split_dev(examples, args.dev_fraction, args.seed),
    };
    if train.is_empty() || dev.is_empty() {
        bail!(
            "training needs non-empty training and development sets ({} / {} examples)",
            train.len(),
            dev.len()
        );
    }
    writeln!(err, "training on {} examples, {} held out for development", train.len(), dev.len())?;

    let mut log = String::from("epoch\ttrain_loss\tdev_loss\tlr\n");
    let outcome = train_with(&train, &dev, &config, |e| {
        log.push_str(&format!("{}\t{:.6}\t{:.6}\t{:e}\n", e.epoch, e.train_loss, e.dev_loss, e.lr));
        let _ = writeln!(
            err,
            "epoch {:>3}  train {:.4}  dev {:.4}  lr {:e}",
            e.epoch, e.train_loss, e.dev_loss, e.lr
        );
    })?;
    save_model(&outcome.model, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".log.tsv");
        PathBuf::from(p)
    });
    fs::write(&log_path, log).with_context(|| format!("writing {}", log_path.display()))?;
    writeln!(out, "best_epoch\t{}", outcome.best_epoch)?;
    writeln!(out, "checksum\t{}", outcome.model.params.checksum())?;
    Ok(())
}

pub fn cmd_translate(args: &TranslateArgs, stdin: &mut dyn BufRead, out: &mut dyn Write) -> Result<()> {
    require_file(&args.model, "model")?;
    let model = load_model(&args.model).with_context(|| format!("loading model {}", args.model.display()))?;
    let terms = if args.terms.is_empty() {
        read_lines(None, stdin)?
    } else {
        args.terms.clone()
    };
    let translator = NeuralTranslator::new(model);
    for term in terms {
        writeln!(out, "{}", translator.translate(&term).unwrap_or_default())?;
    }
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    if !args.corpus.is_dir() {
        bail!("corpus directory {} does not exist", args.corpus.display());
    }
    let normalizer = build_normalizer(&args.pipeline, err)?;
    let docs = load_corpus(&args.corpus)?;
    let report = evaluate_documents(&docs, &normalizer)?;
    write!(out, "{}", report.to_pretty())?;
    let tsv = report.to_tsv();
    match &args.out {
        Some(path) => fs::write(path, tsv).with_context(|| format!("writing {}", path.display()))?,
        None => {
            writeln!(out)?;
            write!(out, "{tsv}")?;
        }
    }
    Ok(())
}

/// Maps an error chain to the process exit code.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    if e.downcast_ref::<UsageError>().is_some() {
        2
    } else {
        1
    }
}

pub(crate) fn level_or_default(level: Option<&str>) -> Result<SearchLevel> {
    match level {
        None => Ok(SearchLevel::Btm),
        Some(s) => match s.parse::<SearchLevel>() {
            Ok(SearchLevel::Unresolved) | Err(_) => Err(anyhow!("max_level must be ML, CL or BTM")),
            Ok(l) => Ok(l),
        },
    }
}
