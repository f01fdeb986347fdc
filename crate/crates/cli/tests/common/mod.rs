#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture_str(name: &str) -> String {
    fixture(name).display().to_string()
}

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the CLI in-process with `args` (without the program name).
pub fn run(args: &[&str], stdin: &str) -> Output {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut input = stdin.as_bytes();
    let argv = std::iter::once("normlex").chain(args.iter().copied());
    let code = normlex_cli::run(argv, &mut input, &mut out, &mut err);
    Output {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

/// Pipeline flags for the bundled 50-concept fixture with the dictionary
/// translator.
pub fn fixture_pipeline() -> Vec<String> {
    vec![
        "--lexicon".into(),
        fixture_str("lexicon.tsv"),
        "--relations".into(),
        fixture_str("relations.tsv"),
        "--translator".into(),
        "dictionary".into(),
        "--dict".into(),
        fixture_str("dict_fr_en.tsv"),
    ]
}

/// A synthetic "French-like" to "English-like" term language: random
/// syllable stems with a rewritten suffix (`ite` -> `itis`, ...) and a few
/// consonant substitutions in the stem. Returns distinct source/target pairs.
pub fn toy_pairs(n: usize, seed: u64) -> Vec<(String, String)> {
    const CONSONANTS: [char; 12] = ['k', 'l', 'm', 'n', 'r', 't', 'p', 's', 'd', 'v', 'g', 'y'];
    const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];
    const SUFFIXES: [(&str, &str); 4] = [("ite", "itis"), ("ose", "osis"), ("ome", "oma"), ("ique", "ic")];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::with_capacity(n);
    while pairs.len() < n {
        let syllables = rng.random_range(2..=3);
        let mut stem = String::new();
        for _ in 0..syllables {
            stem.push(*CONSONANTS.choose(&mut rng).unwrap());
            stem.push(*VOWELS.choose(&mut rng).unwrap());
        }
        let (fr_suffix, en_suffix) = *SUFFIXES.choose(&mut rng).unwrap();
        let source = format!("{stem}{fr_suffix}");
        if !seen.insert(source.clone()) {
            continue;
        }
        let target_stem: String = stem
            .chars()
            .map(|c| match c {
                'k' => 'c',
                'y' => 'i',
                'v' => 'b',
                other => other,
            })
            .collect();
        pairs.push((source, format!("{target_stem}{en_suffix}")));
    }
    pairs
}

pub fn to_tsv(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(s, t)| format!("{s}\t{t}\n")).collect()
}
