use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use normlex_core::index::{levenshtein, normalize_term, within_distance};
use normlex_core::neuralmt::{build_vocabs, decode_greedy, encode};
use normlex_core::{ConceptId, FuzzyConfig, ModelConfig, TermIndex, TrainingExample, TranslationModel};

fn synthetic_index(n: usize) -> TermIndex {
    let syllables = ["ka", "lo", "mi", "ne", "ru", "ta", "pe", "si", "do", "va"];
    let terms: Vec<(String, ConceptId, bool)> = (0..n)
        .map(|i| {
            let mut k = i;
            let mut word = String::new();
            for _ in 0..4 {
                word.push_str(syllables[k % syllables.len()]);
                k /= syllables.len();
            }
            let term = if i % 3 == 0 { format!("{word} itis") } else { word };
            (term, ConceptId::new(1 + i as u32).unwrap(), i % 2 == 0)
        })
        .collect();
    TermIndex::from_terms("en", terms.iter().map(|(t, c, p)| (t.as_str(), *c, *p)))
}

fn edit_distance(c: &mut Criterion) {
    c.bench_function("levenshtein/12x13", |b| {
        b.iter(|| levenshtein(black_box("hypertension"), black_box("hypertensions")))
    });
    c.bench_function("within_distance/1", |b| {
        b.iter(|| within_distance(black_box("hypertension"), black_box("hypertenzion"), 1))
    });
}

fn lookups(c: &mut Criterion) {
    let index = synthetic_index(10_000);
    let fuzzy = FuzzyConfig::default();
    let exact = normalize_term("kalomine");
    let near = normalize_term("kalomone itis");
    c.bench_function("exact_lookup/10k", |b| b.iter(|| index.exact_lookup(black_box(&exact))));
    c.bench_function("fuzzy_lookup/10k", |b| b.iter(|| index.fuzzy_lookup(black_box(&near), &fuzzy)));
}

fn translator(c: &mut Criterion) {
    let examples = vec![TrainingExample::single("insuffisance cardiaque", "heart failure").unwrap()];
    let (src, tgt) = build_vocabs(&examples);
    let model = TranslationModel::new(ModelConfig::toy(), src, tgt).unwrap();
    let mut group = c.benchmark_group("toy_model");
    group.sample_size(20);
    group.bench_function("encode", |b| {
        b.iter(|| encode(&model, black_box("insuffisance cardiaque")).unwrap())
    });
    group.bench_function("decode_greedy", |b| {
        b.iter(|| decode_greedy(&model, black_box("insuffisance cardiaque")).unwrap())
    });
    group.finish();
}

criterion_group!(benches, edit_distance, lookups, translator);
criterion_main!(benches);
