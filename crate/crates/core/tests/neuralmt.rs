use normlex_core::neuralmt::{
    build_vocabs, decode_greedy, gradient_check, model_from_bytes, model_to_bytes, multi_target_loss, parse_parallel_corpus, sequence_loss,
    train, REFERENCE_FILTER_TOTAL,
};
use normlex_core::{ModelConfig, TrainingExample, TranslationModel};
use proptest::prelude::*;

fn small_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 6,
        encoder_hidden: 5,
        decoder_hidden: 7,
        attention_dim: 4,
        batch_size: 4,
        max_epochs: 4,
        initial_lr: 3e-3,
        ..ModelConfig::default()
    }
}

fn corpus() -> Vec<TrainingExample> {
    parse_parallel_corpus("rhume\tcold\ntoux\tcough\ngrippe\tflu\ngrippe\tinfluenza\nfièvre\tfever\nzona\tshingles\n").unwrap()
}

fn model(seed: u64) -> TranslationModel {
    let (src, tgt) = build_vocabs(&corpus());
    let mut cfg = small_config();
    cfg.seed = seed;
    TranslationModel::new(cfg, src, tgt).unwrap()
}

#[test]
fn reference_filter_total() {
    assert_eq!(
        ModelConfig::default().conv_filter_counts.iter().sum::<usize>(),
        REFERENCE_FILTER_TOTAL
    );
    assert_eq!(ModelConfig::toy().conv_filter_counts.iter().sum::<usize>(), REFERENCE_FILTER_TOTAL);
}

#[test]
fn analytic_gradients_agree_with_finite_differences() {
    let m = model(3);
    let grippe = corpus().into_iter().find(|e| e.source == "grippe").unwrap();
    assert_eq!(grippe.targets.len(), 2);
    for ex in [&corpus()[0], &grippe] {
        let report = gradient_check(&m, ex, 1e-5, 6, 17).unwrap();
        assert!(report.max_rel_error < 1e-4, "{:?}", report.per_tensor);
        assert!(report.coordinates_checked > 0);
    }
}

#[test]
fn model_bytes_round_trip() {
    let m = model(5);
    let bytes = model_to_bytes(&m);
    let back = model_from_bytes(&bytes).unwrap();
    assert_eq!(model_to_bytes(&back), bytes);
    assert_eq!(back.params.checksum(), m.params.checksum());
    assert_eq!(decode_greedy(&back, "toux").unwrap(), decode_greedy(&m, "toux").unwrap());
    assert!(model_from_bytes(&bytes[..bytes.len() / 2]).is_err());
    let mut flipped = bytes.clone();
    flipped[0] ^= 0xff;
    assert!(model_from_bytes(&flipped).is_err());
}

#[test]
fn training_is_reproducible_and_learns() {
    let data = corpus();
    let a = train(&data, &data, &small_config()).unwrap();
    let b = train(&data, &data, &small_config()).unwrap();
    assert_eq!(model_to_bytes(&a.model), model_to_bytes(&b.model));
    assert_eq!(a.log, b.log);
    assert!(a.log.last().unwrap().train_loss < a.log[0].train_loss);
    assert!(a.log.iter().all(|e| e.train_loss.is_finite() && e.dev_loss.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn multi_target_loss_is_min_over_targets(
        seed in 0u64..1000,
        targets in prop::collection::vec("[a-z]{1,6}", 1..4),
    ) {
        let m = model(seed);
        let ex = TrainingExample::new("grippe", targets.clone());
        prop_assume!(ex.is_ok());
        let ex = ex.unwrap();
        let oracle = ex.targets.iter().map(|t| sequence_loss(&m, "grippe", t).unwrap()).fold(f64::INFINITY, f64::min);
        let got = multi_target_loss(&m, &ex).unwrap();
        prop_assert!((got - oracle).abs() <= 1e-12, "{} vs {}", got, oracle);
    }
}
