use std::path::PathBuf;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand, ValueEnum};
use normlex_core::SearchLevel;

/// Languages a lexicon row may carry.
pub const LANGUAGES: [&str; 5] = ["en", "fr", "es", "nl", "de"];

fn lang_parser() -> PossibleValuesParser {
    PossibleValuesParser::new(LANGUAGES)
}

fn parse_level(s: &str) -> Result<SearchLevel, String> {
    match s.parse::<SearchLevel>() {
        Ok(SearchLevel::Unresolved) | Err(_) => Err(format!("expected one of ML, CL, BTM, got {s:?}")),
        Ok(level) => Ok(level),
    }
}

#[derive(Debug, Parser)]
#[command(name = "normlex", version, about = "Multilingual biomedical concept normalization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build per-language term indexes and write them to the cache directory.
    BuildIndex(BuildIndexArgs),
    /// Normalize terms given as arguments, in a file, or on stdin.
    Normalize(NormalizeArgs),
    /// Train the character-level translator on a parallel TSV corpus.
    TrainMt(TrainArgs),
    /// Translate terms with a trained model.
    Translate(TranslateArgs),
    /// Evaluate ML, CL and BTM search against an annotated corpus.
    Evaluate(EvaluateArgs),
    /// Serve normalization over local HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct LexiconArgs {
    /// Lexicon TSV: cui, lang, term, preferred, semantic group.
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Concept relations TSV (two CUIs per line).
    #[arg(long)]
    pub relations: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TranslatorKind {
    None,
    Dictionary,
    Neural,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub lexicon: LexiconArgs,
    /// Translator used for the BTM level.
    #[arg(long, value_enum, default_value_t = TranslatorKind::None)]
    pub translator: TranslatorKind,
    /// Bilingual dictionary TSV for `--translator dictionary`.
    #[arg(long)]
    pub dict: Option<PathBuf>,
    /// Model file for `--translator neural`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Deepest search level: ML, CL or BTM.
    #[arg(long, value_parser = parse_level, default_value = "BTM")]
    pub max_level: SearchLevel,
    /// Comma-separated semantic groups to keep during disambiguation.
    #[arg(long, value_delimiter = ',')]
    pub sem_groups: Vec<String>,
}

#[derive(Debug, Args)]
pub struct BuildIndexArgs {
    #[command(flatten)]
    pub lexicon: LexiconArgs,
    /// Only index these languages (repeatable); defaults to every language
    /// present in the lexicon.
    #[arg(long, value_parser = lang_parser())]
    pub lang: Vec<String>,
    /// Cache directory; defaults to $NORMLEX_CACHE_DIR.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Language of the terms.
    #[arg(long, value_parser = lang_parser())]
    pub lang: String,
    /// File with one term per line.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Write the TSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Terms to normalize; read from stdin when neither terms nor --input
    /// are given.
    pub terms: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Reference dimensions (embedding 256, decoder 512).
    Reference,
    /// Small embedding and recurrent sizes for quick experiments.
    Toy,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Parallel TSV: source, target (repeated sources add alternatives).
    #[arg(long)]
    pub train: PathBuf,
    /// Development TSV; when absent a seeded fraction of --train is held out.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub dev_fraction: f64,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss log (TSV); defaults to `<out>.log.tsv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Preset::Reference)]
    pub preset: Preset,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Terms to translate; read from stdin when empty.
    pub terms: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Corpus directory with manifest.tsv and .txt/.ann pairs.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Report TSV path; the TSV goes to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Maximum number of requests processed at once.
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
}
