use rand::Rng;

use super::schedule::DiffusionSchedule;
use super::state::{check_tokens, Condition, LayerMaskState};
use crate::error::{Error, Result};
use crate::features::FeatureFrames;
use crate::predictor::{MaskedExample, OptimizerState, Predictor, Trainable};

/// Masks each position independently with probability `σ(t)`.
pub fn forward_mask(
    tokens: &[u32],
    codebook_size: usize,
    t: f64,
    schedule: &DiffusionSchedule,
    rng: &mut impl Rng,
) -> Result<LayerMaskState> {
    let p = schedule.sigma(t)?;
    mask_with_probability(tokens, codebook_size, p, rng)
}

pub fn mask_with_probability(
    tokens: &[u32],
    codebook_size: usize,
    p: f64,
    rng: &mut impl Rng,
) -> Result<LayerMaskState> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("mask probability {p} outside [0, 1]")));
    }
    check_tokens(tokens, codebook_size)?;
    let mask = tokens.iter().map(|_| rng.random::<f64>() < p).collect();
    LayerMaskState::from_tokens(tokens, mask, codebook_size)
}

/// Mean negative log-likelihood of the clean tokens at the masked positions.
pub fn masked_nll(
    predictor: &(impl Predictor + ?Sized),
    target: &[u32],
    state: &LayerMaskState,
    cond: &Condition<'_>,
) -> Result<f64> {
    if target.len() != state.len() {
        return Err(Error::shape("target and state lengths differ"));
    }
    let masked: Vec<usize> = (0..state.len()).filter(|&l| state.mask()[l]).collect();
    if masked.is_empty() {
        return Err(Error::NoMaskedTargets);
    }
    check_tokens(target, predictor.codebook_size())?;
    let out = predictor.predict(state.values(), cond)?;
    out.validate()?;
    let total: f64 = masked
        .iter()
        .map(|&l| -out.row(l)[target[l] as usize].ln())
        .sum();
    Ok(total / masked.len() as f64)
}

/// Which model a training batch is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Semantic,
    Acoustic { n_acoustic: usize },
}

/// One utterance: every token layer (semantic first) and its `y_en`.
#[derive(Debug, Clone, Copy)]
pub struct TrainingItem<'a> {
    pub layers: &'a [Vec<u32>],
    pub y_en: &'a FeatureFrames,
}

/// Draws `t ~ U(0, T]` and the layer for each item, masks that layer,
/// applies one optimizer update and returns the batch loss before the
/// update. A batch without a single mask is redrawn once.
pub fn train_step(
    predictor: &mut impl Trainable,
    optimizer: &mut OptimizerState,
    batch: &[TrainingItem<'_>],
    kind: ModelKind,
    schedule: &DiffusionSchedule,
    rng: &mut impl Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let k = predictor.codebook_size();
    for attempt in 0..2 {
        let mut examples = Vec::with_capacity(batch.len());
        for item in batch {
            let t = schedule.horizon * (1.0 - rng.random::<f64>());
            let layer = match kind {
                ModelKind::Semantic => 0,
                ModelKind::Acoustic { n_acoustic } => rng.random_range(1..=n_acoustic),
            };
            let target = item
                .layers
                .get(layer)
                .ok_or_else(|| Error::shape(format!("item has no layer {layer}")))?;
            let state = forward_mask(target, k, t, schedule, rng)?;
            let cond = match kind {
                ModelKind::Semantic => Condition::semantic(item.y_en),
                ModelKind::Acoustic { n_acoustic } => {
                    if item.layers.len() != n_acoustic + 1 {
                        return Err(Error::shape("item layer count does not match the model"));
                    }
                    let lower = item.layers[1..layer].iter().map(Vec::as_slice).collect();
                    Condition::acoustic(item.y_en, &item.layers[0], lower, layer, n_acoustic, k)?
                }
            };
            examples.push(MaskedExample {
                target,
                state: state.values().to_vec(),
                cond,
            });
        }
        if examples.iter().all(|e| e.masked_count(k) == 0) {
            if attempt == 0 {
                continue;
            }
            return Err(Error::NoMaskedTargets);
        }
        let (loss, grad) = predictor.loss_and_grad(&examples)?;
        optimizer.step(predictor.params_mut(), &grad)?;
        return Ok(loss);
    }
    unreachable!("the loop returns on its second pass")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{FixedPredictor, UniformPredictor};
    use crate::rng::rng_from_seed;

    #[test]
    fn mask_extremes() {
        let s = DiffusionSchedule::default();
        let tokens = vec![1u32; 1000];
        let mut rng = rng_from_seed(0);
        assert_eq!(forward_mask(&tokens, 4, 1.0, &s, &mut rng).unwrap().masked_count(), 1000);
        assert_eq!(forward_mask(&tokens, 4, 0.0, &s, &mut rng).unwrap().masked_count(), 0);
        assert!(forward_mask(&[4], 4, 0.5, &s, &mut rng).is_err());
    }

    #[test]
    fn nll_reference_values() {
        let y = FeatureFrames::zeros(3, 1);
        let cond = Condition::semantic(&y);
        let target = [2u32, 0, 1];
        let state = LayerMaskState::from_tokens(&target, vec![true, false, true], 1024).unwrap();
        let u = masked_nll(&UniformPredictor { codebook_size: 1024 }, &target, &state, &cond).unwrap();
        assert!((u - 1024f64.ln()).abs() < 1e-12);
        let oracle = FixedPredictor::single(1024, target.to_vec()).unwrap();
        assert_eq!(masked_nll(&oracle, &target, &state, &cond).unwrap(), 0.0);
        let none = LayerMaskState::from_tokens(&target, vec![false; 3], 1024).unwrap();
        let err = masked_nll(&oracle, &target, &none, &cond).unwrap_err();
        assert_eq!(err.to_string(), "no masked targets");
    }
}
