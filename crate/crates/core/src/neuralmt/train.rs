use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::{Trace, TranslationModel};
use super::params::Params;
use super::vocab::CharVocab;
use super::MtError;

/// A source phrase with every admissible translation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub source: String,
    pub targets: Vec<String>,
}

impl TrainingExample {
    pub fn new(source: impl Into<String>, targets: Vec<String>) -> Result<Self, MtError> {
        let source = source.into();
        if source.is_empty() {
            return Err(MtError::EmptySource);
        }
        if targets.is_empty() || targets.iter().any(|t| t.is_empty()) {
            return Err(MtError::EmptyTarget);
        }
        Ok(Self { source, targets })
    }

    pub fn single(source: impl Into<String>, target: impl Into<String>) -> Result<Self, MtError> {
        Self::new(source, vec![target.into()])
    }
}

/// Forward pass over a batch, each source on its lowest-loss target (first
/// one on ties).
pub(crate) fn batch_trace(model: &TranslationModel, batch: &[&TrainingExample]) -> Result<Trace, MtError> {
    let mut sources = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for ex in batch {
        sources.push(model.source_ids(&ex.source)?);
        let ids = ex.targets.iter().map(|t| model.target_ids(t)).collect::<Result<Vec<_>, _>>()?;
        if ids.is_empty() {
            return Err(MtError::EmptyTarget);
        }
        targets.push(ids);
    }
    Ok(model.forward(&sources, &targets))
}

/// Loss of the translation the model currently finds most likely among the
/// admissible targets.
pub fn multi_target_loss(model: &TranslationModel, ex: &TrainingExample) -> Result<f64, MtError> {
    Ok(batch_trace(model, &[ex])?.losses().sum())
}

/// Loss and gradient of [`multi_target_loss`]; only the minimizing target
/// contributes to the gradient.
pub fn multi_target_gradient(model: &TranslationModel, ex: &TrainingExample) -> Result<(f64, Params), MtError> {
    let trace = batch_trace(model, &[ex])?;
    let mut grad = model.params.zeros_like();
    model.backward(&trace, &mut grad, 1.0);
    Ok((trace.losses().sum(), grad))
}

/// Mean multi-target loss, evaluated in mini-batches.
pub fn mean_loss(model: &TranslationModel, examples: &[TrainingExample]) -> Result<f64, MtError> {
    if examples.is_empty() {
        return Err(MtError::EmptyDataset);
    }
    let mut total = 0.0;
    let refs: Vec<&TrainingExample> = examples.iter().collect();
    for batch in refs.chunks(model.config.batch_size.max(1)) {
        total += batch_trace(model, batch)?.losses().sum::<f64>();
    }
    Ok(total / examples.len() as f64)
}

/// Fraction of examples whose greedy decoding equals one of the targets
/// (compared lowercased).
pub fn exact_match_rate(model: &TranslationModel, examples: &[TrainingExample]) -> Result<f64, MtError> {
    if examples.is_empty() {
        return Err(MtError::EmptyDataset);
    }
    let mut hits = 0usize;
    for ex in examples {
        let out = model.decode_greedy(&ex.source)?;
        if ex.targets.iter().any(|t| t.to_lowercase() == out) {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

/// Learning rate for the next epoch: halved when the development loss rose
/// relative to the previous epoch.
pub fn next_learning_rate(previous_dev: Option<f64>, current_dev: f64, lr: f64) -> f64 {
    match previous_dev {
        Some(prev) if current_dev > prev => lr / 2.0,
        _ => lr,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

/// Optimizer state carried across mini-batches.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: TranslationModel,
    pub first_moment: Params,
    pub second_moment: Params,
    pub step: u64,
    pub current_lr: f64,
    pub best_dev_loss: f64,
    pub epoch: usize,
}

impl TrainState {
    pub fn new(model: TranslationModel) -> Self {
        let zeros = model.params.zeros_like();
        Self {
            current_lr: model.config.initial_lr,
            first_moment: zeros.clone(),
            second_moment: zeros,
            model,
            step: 0,
            best_dev_loss: f64::INFINITY,
            epoch: 0,
        }
    }

    /// One Adam update with bias correction.
    pub fn apply_gradient(&mut self, grad: &Params) {
        let cfg = &self.model.config;
        let (b1, b2, eps, lr) = (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, self.current_lr);
        self.step += 1;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let params = self.model.params.tensors_mut();
        let m = self.first_moment.tensors_mut();
        let v = self.second_moment.tensors_mut();
        for (((_, _, p), (_, _, m)), ((_, _, v), (_, _, g))) in params.into_iter().zip(m).zip(v.into_iter().zip(grad.tensors())) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }

    /// Runs one epoch of shuffled mini-batches; returns the mean training loss.
    pub fn run_epoch(&mut self, examples: &[TrainingExample], rng: &mut ChaCha8Rng) -> Result<f64, MtError> {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(rng);
        let batch_size = self.model.config.batch_size;
        let clip = self.model.config.grad_clip_norm;
        let mut grad = self.model.params.zeros_like();
        let mut total = 0.0;
        for batch in order.chunks(batch_size) {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            let members: Vec<&TrainingExample> = batch.iter().map(|&i| &examples[i]).collect();
            let trace = batch_trace(&self.model, &members)?;
            total += trace.losses().sum::<f64>();
            self.model.backward(&trace, &mut grad, scale);
            if let Some(max_norm) = clip {
                let norm = grad.norm();
                if norm > max_norm {
                    grad.scale(max_norm / norm);
                }
            }
            self.apply_gradient(&grad);
        }
        self.epoch += 1;
        Ok(total / examples.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest development loss.
    pub model: TranslationModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

pub fn build_vocabs(examples: &[TrainingExample]) -> (CharVocab, CharVocab) {
    let src = CharVocab::build(examples.iter().map(|e| e.source.as_str()));
    let tgt = CharVocab::build(examples.iter().flat_map(|e| e.targets.iter().map(String::as_str)));
    (src, tgt)
}

pub fn train(train: &[TrainingExample], dev: &[TrainingExample], config: &ModelConfig) -> Result<TrainOutcome, MtError> {
    train_with(train, dev, config, |_| {})
}

/// Trains from a seeded initialization. After every epoch the mean development
/// loss is computed; the learning rate is halved whenever it rose. Training
/// stops after `max_epochs` or once the rate falls below `min_lr`.
pub fn train_with<F>(
    train: &[TrainingExample],
    dev: &[TrainingExample],
    config: &ModelConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome, MtError>
where
    F: FnMut(&EpochLog),
{
    if train.is_empty() || dev.is_empty() {
        return Err(MtError::EmptyDataset);
    }
    let (src_vocab, tgt_vocab) = build_vocabs(train);
    let model = TranslationModel::new(config.clone(), src_vocab, tgt_vocab)?;
    let mut state = TrainState::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_5b1e);
    let mut best = state.model.clone();
    let mut best_epoch = 0;
    let mut log = Vec::new();
    let mut previous_dev = None;
    while state.epoch < config.max_epochs && state.current_lr >= config.min_lr {
        let lr = state.current_lr;
        let train_loss = state.run_epoch(train, &mut rng)?;
        let dev_loss = mean_loss(&state.model, dev)?;
        let entry = EpochLog {
            epoch: state.epoch,
            train_loss,
            dev_loss,
            lr,
        };
        on_epoch(&entry);
        log.push(entry);
        if dev_loss < state.best_dev_loss {
            state.best_dev_loss = dev_loss;
            best = state.model.clone();
            best_epoch = state.epoch;
        }
        state.current_lr = next_learning_rate(previous_dev, dev_loss, state.current_lr);
        previous_dev = Some(dev_loss);
    }
    Ok(TrainOutcome {
        model: best,
        log,
        best_epoch,
    })
}
