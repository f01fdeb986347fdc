use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::train::TrainingExample;
use super::MtError;

/// Parses `source<TAB>target` lines. Repeated sources are merged into one
/// example whose targets keep first-seen order without duplicates.
pub fn parse_parallel_corpus(text: &str) -> Result<Vec<TrainingExample>, MtError> {
    let mut order: Vec<String> = Vec::new();
    let mut targets: HashMap<String, Vec<String>> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |reason: &str| MtError::Parse {
            line: i + 1,
            reason: reason.to_string(),
        };
        let (src, tgt) = line.split_once('\t').ok_or_else(|| parse_err("expected source<TAB>target"))?;
        let (src, tgt) = (src.trim(), tgt.trim());
        if src.is_empty() || tgt.is_empty() || tgt.contains('\t') {
            return Err(parse_err("empty field or extra column"));
        }
        let entry = targets.entry(src.to_string()).or_insert_with(|| {
            order.push(src.to_string());
            Vec::new()
        });
        if !entry.iter().any(|t| t == tgt) {
            entry.push(tgt.to_string());
        }
    }
    order
        .into_iter()
        .map(|src| {
            let t = targets.remove(&src).unwrap_or_default();
            TrainingExample::new(src, t)
        })
        .collect()
}

pub fn load_parallel_corpus(path: impl AsRef<Path>) -> Result<Vec<TrainingExample>, MtError> {
    parse_parallel_corpus(&fs::read_to_string(path)?)
}

/// Seeded shuffle, then the first `dev_fraction` of examples (at least one)
/// become the development set.
pub fn split_dev(mut examples: Vec<TrainingExample>, dev_fraction: f64, seed: u64) -> (Vec<TrainingExample>, Vec<TrainingExample>) {
    examples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_dev = ((examples.len() as f64 * dev_fraction).round() as usize).clamp(1, examples.len().saturating_sub(1).max(1));
    let train = examples.split_off(n_dev.min(examples.len()));
    (train, examples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregates_repeated_sources() {
        let ex = parse_parallel_corpus("grippe\tflu\n# c\ngrippe\tinfluenza\ngrippe\tflu\ntoux\tcough\n").unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].source, "grippe");
        assert_eq!(ex[0].targets, vec!["flu", "influenza"]);
        assert_eq!(ex[1].targets, vec!["cough"]);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(parse_parallel_corpus("onlyone\n"), Err(MtError::Parse { line: 1, .. })));
        assert!(matches!(parse_parallel_corpus("a\tb\n\t b\n"), Err(MtError::Parse { line: 2, .. })));
    }

    #[test]
    fn split_is_seeded() {
        let ex = parse_parallel_corpus(&(0..20).map(|i| format!("s{i}\tt{i}\n")).collect::<String>()).unwrap();
        let (a_train, a_dev) = split_dev(ex.clone(), 0.1, 4);
        let (b_train, b_dev) = split_dev(ex, 0.1, 4);
        assert_eq!(a_dev.len(), 2);
        assert_eq!(a_train.len(), 18);
        assert_eq!((a_train, a_dev), (b_train, b_dev));
    }
}
