//! Central finite-difference check of the analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::TranslationModel;
use super::train::{batch_trace, multi_target_gradient, multi_target_loss, TrainingExample};
use super::MtError;

/// Gradients smaller than this are compared on an absolute scale. A central
/// difference with `epsilon = 1e-5` on a loss of order one carries roughly
/// `1e-16 / 1e-5 ≈ 1e-11` of rounding noise, so relative errors of gradients
/// much below this floor would measure noise rather than the backward pass.
pub const GRADIENT_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Largest relative error seen in each tensor.
    pub per_tensor: Vec<(String, f64)>,
    pub coordinates_checked: usize,
    /// Coordinates whose probes straddled a ReLU/max-pool kink or changed
    /// the minimum-loss target; the loss is not differentiable there.
    pub coordinates_skipped: usize,
}

/// Index of the target the multi-target loss trains on (first on ties).
fn argmin_target(model: &TranslationModel, example: &TrainingExample) -> Result<usize, MtError> {
    Ok(batch_trace(model, &[example])?.chosen()[0])
}

/// Tensors upstream of the ReLU and max-pool layers.
fn has_kinks(tensor: &str) -> bool {
    ["src_embed", "conv.", "highway."].iter().any(|p| tensor.starts_with(p))
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR)
}

/// Compares analytic gradients against `(f(x+e) - f(x-e)) / 2e` on up to
/// `max_per_tensor` randomly chosen coordinates of every tensor.
pub fn gradient_check(
    model: &TranslationModel,
    example: &TrainingExample,
    epsilon: f64,
    max_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport, MtError> {
    if max_per_tensor == 0 {
        return Err(MtError::InvalidConfig(
            "gradient check needs at least one coordinate per tensor".into(),
        ));
    }
    let (_, grad) = multi_target_gradient(model, example)?;
    let base_pattern = model.activation_pattern(&example.source)?;
    let base_target = argmin_target(model, example)?;
    let analytic: Vec<Vec<f64>> = grad.tensors().into_iter().map(|t| t.2.to_vec()).collect();
    let mut probe = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_tensor = Vec::new();
    let (mut checked, mut skipped) = (0, 0);

    let multi = example.targets.len() > 1;
    let smooth = |probe: &TranslationModel, kinks: bool| -> Result<bool, MtError> {
        Ok((!kinks || probe.activation_pattern(&example.source)? == base_pattern)
            && (!multi || argmin_target(probe, example)? == base_target))
    };

    let names: Vec<String> = model.params.tensors().into_iter().map(|t| t.0).collect();
    for (ti, grads) in analytic.iter().enumerate() {
        let kinks = has_kinks(&names[ti]);
        let len = grads.len();
        let coords = sample(&mut rng, len, max_per_tensor.min(len)).into_vec();
        let mut worst = 0.0f64;
        for i in coords {
            let original = probe.params.tensors()[ti].2[i];
            probe.params.tensors_mut()[ti].2[i] = original + epsilon;
            let plus = multi_target_loss(&probe, example)?;
            let plus_smooth = smooth(&probe, kinks)?;
            probe.params.tensors_mut()[ti].2[i] = original - epsilon;
            let minus = multi_target_loss(&probe, example)?;
            let minus_smooth = smooth(&probe, kinks)?;
            probe.params.tensors_mut()[ti].2[i] = original;
            if !(plus_smooth && minus_smooth) {
                skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(relative_error(grads[i], numeric));
            checked += 1;
        }
        per_tensor.push((names[ti].clone(), worst));
    }
    let max_rel_error = per_tensor.iter().map(|t| t.1).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        per_tensor,
        coordinates_checked: checked,
        coordinates_skipped: skipped,
    })
}
