use rand::Rng;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use super::schedule::DiffusionSchedule;
use super::state::{Condition, LayerMaskState};
use crate::error::{Error, Result};
use crate::features::FeatureFrames;
use crate::predictor::Predictor;
use crate::rng::{derive_named, derive_seed, rng_from_seed};

/// Per-step sampling controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub top_k: usize,
    /// `0` means argmax.
    pub temperature: f64,
    /// Perturb masked confidences with `temperature · Gumbel(0, 1)` noise.
    pub gumbel: bool,
}

/// Sampling controls for one token layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSampling {
    pub steps: usize,
    pub top_k: usize,
    pub temperature_start: f64,
    pub gumbel: bool,
}

impl LayerSampling {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("at least one sampling step is required"));
        }
        if self.top_k == 0 {
            return Err(Error::invalid("top_k must be at least 1"));
        }
        if !(self.temperature_start >= 0.0 && self.temperature_start.is_finite()) {
            return Err(Error::invalid("temperature must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Linear anneal: `τ_k = τ_0 (S - k) / S` for steps `k = 1..=S`.
    pub fn temperature(&self, k: usize) -> f64 {
        self.temperature_start * (self.steps - k) as f64 / self.steps as f64
    }
}

/// Sampling configuration for the whole hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub semantic_steps: usize,
    pub acoustic_steps: Vec<usize>,
    pub top_k: usize,
    pub temperature_start: f64,
    pub gumbel: bool,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            semantic_steps: 15,
            acoustic_steps: vec![10, 1, 1, 1, 1],
            top_k: 20,
            temperature_start: 1.5,
            gumbel: true,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn semantic(&self) -> LayerSampling {
        self.layer(self.semantic_steps)
    }

    /// Settings for acoustic layer `j` (1-based).
    pub fn acoustic(&self, j: usize) -> Result<LayerSampling> {
        let steps = *self
            .acoustic_steps
            .get(j.wrapping_sub(1))
            .ok_or_else(|| Error::invalid(format!("no step count for acoustic layer {j}")))?;
        Ok(self.layer(steps))
    }

    fn layer(&self, steps: usize) -> LayerSampling {
        LayerSampling {
            steps,
            top_k: self.top_k,
            temperature_start: self.temperature_start,
            gumbel: self.gumbel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.semantic().validate()?;
        if self.acoustic_steps.is_empty() {
            return Err(Error::invalid("acoustic step list is empty"));
        }
        for j in 1..=self.acoustic_steps.len() {
            self.acoustic(j)?.validate()?;
        }
        Ok(())
    }
}

/// Draws one token from `probs` after temperature scaling and top-k
/// truncation. Zero-probability tokens are never drawn. Returns the token.
pub fn sample_token(probs: &[f64], top_k: usize, temperature: f64, rng: &mut impl Rng) -> usize {
    if temperature == 0.0 {
        return crate::codec::argmax(probs);
    }
    let mut cand: Vec<usize> = (0..probs.len()).filter(|&v| probs[v] > 0.0).collect();
    if cand.len() > top_k {
        // highest probability first, lowest index among equals
        cand.select_nth_unstable_by(top_k - 1, |&a, &b| {
            probs[b].partial_cmp(&probs[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        cand.truncate(top_k);
        cand.sort_unstable();
    }
    let max_lp = cand
        .iter()
        .map(|&v| probs[v].ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = cand
        .iter()
        .map(|&v| ((probs[v].ln() - max_lp) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (&v, &w) in cand.iter().zip(&weights) {
        if u < w {
            return v;
        }
        u -= w;
    }
    *cand.last().expect("a distribution has at least one positive entry")
}

/// One reverse transition from `t` to `t - dt`: sample every masked position,
/// then remask the `min(⌊L σ(t - dt)⌋, masked)` freshly sampled positions
/// with the lowest confidence. Positions unmasked before this step stay.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step(
    state: &LayerMaskState,
    predictor: &(impl Predictor + ?Sized),
    cond: &Condition<'_>,
    t: f64,
    dt: f64,
    schedule: &DiffusionSchedule,
    params: &StepParams,
    rng: &mut impl Rng,
) -> Result<LayerMaskState> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt = {dt} must be positive")));
    }
    step_to(state, predictor, cond, t, (t - dt).max(0.0), schedule, params, rng)
}

/// [`reverse_step`] with the target time given directly, so grid points
/// are hit exactly rather than through `t - dt` rounding.
#[allow(clippy::too_many_arguments)]
fn step_to(
    state: &LayerMaskState,
    predictor: &(impl Predictor + ?Sized),
    cond: &Condition<'_>,
    t: f64,
    t_next: f64,
    schedule: &DiffusionSchedule,
    params: &StepParams,
    rng: &mut impl Rng,
) -> Result<LayerMaskState> {
    if params.top_k == 0 || !(params.temperature >= 0.0) {
        return Err(Error::invalid("bad step parameters"));
    }
    let k = state.codebook_size();
    if predictor.codebook_size() != k {
        return Err(Error::shape("predictor and state codebook sizes differ"));
    }
    if !(t_next < t) {
        return Err(Error::invalid(format!("step from {t} to {t_next} does not move backwards")));
    }
    schedule.sigma(t)?;
    let target = (state.len() as f64 * schedule.sigma(t_next)?).floor() as usize;

    let out = predictor.predict(state.values(), cond)?;
    if out.len() != state.len() || out.codebook_size() != k {
        return Err(Error::shape("predictor output shape does not match the state"));
    }
    out.validate()?;

    let masked: Vec<usize> = (0..state.len()).filter(|&l| state.mask()[l]).collect();
    let mut next = state.clone();
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(masked.len());
    for &pos in &masked {
        let row = out.row(pos);
        let token = sample_token(row, params.top_k, params.temperature, rng);
        next.set(pos, token as u32);
        scored.push((row[token].ln(), pos));
    }
    if params.gumbel && params.temperature > 0.0 {
        let g = Gumbel::new(0.0, 1.0).expect("unit Gumbel is valid");
        for s in &mut scored {
            s.0 += params.temperature * g.sample(rng);
        }
    }
    let n_remask = target.min(masked.len());
    if n_remask > 0 {
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
        for &(_, pos) in &scored[..n_remask] {
            next.remask(pos);
        }
    }
    Ok(next)
}

/// Runs `S` reverse steps from the fully masked layer on the grid
/// `t_k = T (S - k) / S`. `observe` sees the state after every step.
pub fn sample_layer_observed(
    predictor: &(impl Predictor + ?Sized),
    cond: &Condition<'_>,
    len: usize,
    schedule: &DiffusionSchedule,
    sampling: &LayerSampling,
    rng: &mut impl Rng,
    mut observe: impl FnMut(usize, &LayerMaskState),
) -> Result<Vec<u32>> {
    sampling.validate()?;
    let k = predictor.codebook_size();
    cond.validate(len, k)?;
    let s = sampling.steps;
    let mut state = LayerMaskState::fully_masked(len, k);
    for step in 1..=s {
        let t = schedule.grid_time(step - 1, s);
        let params = StepParams {
            top_k: sampling.top_k,
            temperature: sampling.temperature(step),
            gumbel: sampling.gumbel,
        };
        state = step_to(&state, predictor, cond, t, schedule.grid_time(step, s), schedule, &params, rng)?;
        observe(step, &state);
    }
    state.into_tokens()
}

pub fn sample_layer(
    predictor: &(impl Predictor + ?Sized),
    cond: &Condition<'_>,
    len: usize,
    schedule: &DiffusionSchedule,
    sampling: &LayerSampling,
    rng: &mut impl Rng,
) -> Result<Vec<u32>> {
    sample_layer_observed(predictor, cond, len, schedule, sampling, rng, |_, _| {})
}

/// Semantic tokens conditioned on `y_en` alone.
pub fn sample_semantic(
    y_en: &FeatureFrames,
    predictor: &(impl Predictor + ?Sized),
    schedule: &DiffusionSchedule,
    sampling: &SamplingConfig,
) -> Result<Vec<u32>> {
    let mut rng = rng_from_seed(derive_named(sampling.seed, "semantic"));
    sample_layer(
        predictor,
        &Condition::semantic(y_en),
        y_en.frames(),
        schedule,
        &sampling.semantic(),
        &mut rng,
    )
}

/// Acoustic layers `1..=N_a`, one at a time, each conditioned on `y_en`, the
/// semantic tokens and the layers already sampled. `N_a` is the length of
/// `sampling.acoustic_steps`.
pub fn sample_acoustic(
    y_en: &FeatureFrames,
    semantic: &[u32],
    predictor: &(impl Predictor + ?Sized),
    schedule: &DiffusionSchedule,
    sampling: &SamplingConfig,
) -> Result<Vec<Vec<u32>>> {
    let n_acoustic = sampling.acoustic_steps.len();
    let k = predictor.codebook_size();
    let base = derive_named(sampling.seed, "acoustic");
    let mut layers: Vec<Vec<u32>> = Vec::with_capacity(n_acoustic);
    for j in 1..=n_acoustic {
        let lower: Vec<&[u32]> = layers.iter().map(Vec::as_slice).collect();
        let cond = Condition::acoustic(y_en, semantic, lower, j, n_acoustic, k)?;
        let mut rng = rng_from_seed(derive_seed(base, j as u64));
        let layer = sample_layer(predictor, &cond, y_en.frames(), schedule, &sampling.acoustic(j)?, &mut rng)?;
        layers.push(layer);
    }
    Ok(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{FixedPredictor, UniformPredictor};

    #[test]
    fn temperature_anneals_to_zero() {
        let s = LayerSampling { steps: 15, top_k: 20, temperature_start: 1.5, gumbel: true };
        assert_eq!(s.temperature(15), 0.0);
        assert!((s.temperature(1) - 1.4).abs() < 1e-12);
        let one = LayerSampling { steps: 1, ..s };
        assert_eq!(one.temperature(1), 0.0);
    }

    #[test]
    fn defaults() {
        let c = SamplingConfig::default();
        assert_eq!(c.semantic_steps, 15);
        assert_eq!(c.acoustic_steps, vec![10, 1, 1, 1, 1]);
        assert_eq!(c.top_k, 20);
        assert_eq!(c.temperature_start, 1.5);
        assert!(c.gumbel);
        assert!(c.acoustic(6).is_err());
        assert!(c.acoustic(0).is_err());
    }

    #[test]
    fn top_k_one_is_argmax() {
        let mut rng = rng_from_seed(1);
        let p = [0.1, 0.5, 0.4];
        for _ in 0..100 {
            assert_eq!(sample_token(&p, 1, 2.0, &mut rng), 1);
        }
        assert_eq!(sample_token(&[0.5, 0.5], 2, 0.0, &mut rng), 0);
        // zero-probability tokens are never drawn
        for _ in 0..1000 {
            assert_ne!(sample_token(&[0.5, 0.0, 0.5], 3, 50.0, &mut rng), 1);
        }
    }

    #[test]
    fn fixed_predictor_is_reproduced() {
        let y = FeatureFrames::zeros(6, 2);
        let tokens = vec![3, 1, 4, 1, 5, 0];
        let p = FixedPredictor::single(8, tokens.clone()).unwrap();
        for seed in 0..100 {
            let cfg = SamplingConfig { seed, ..Default::default() };
            assert_eq!(sample_semantic(&y, &p, &DiffusionSchedule::default(), &cfg).unwrap(), tokens);
        }
    }

    #[test]
    fn single_step_from_t_resolves_everything() {
        let y = FeatureFrames::zeros(5, 1);
        let p = UniformPredictor { codebook_size: 4 };
        let s = DiffusionSchedule::default();
        let state = LayerMaskState::fully_masked(5, 4);
        let params = StepParams { top_k: 4, temperature: 1.0, gumbel: true };
        let next = reverse_step(&state, &p, &Condition::semantic(&y), 1.0, 1.0, &s, &params, &mut rng_from_seed(3)).unwrap();
        assert!(next.is_resolved());
        assert!(reverse_step(&state, &p, &Condition::semantic(&y), 1.0, 0.0, &s, &params, &mut rng_from_seed(3)).is_err());
    }

    struct Broken;
    impl Predictor for Broken {
        fn codebook_size(&self) -> usize {
            2
        }
        fn predict(&self, state: &[u32], _: &Condition<'_>) -> Result<crate::predictor::PredictorOutput> {
            crate::predictor::PredictorOutput::new(state.len(), 2, vec![0.6; 2 * state.len()])
        }
    }

    #[test]
    fn invalid_distribution_is_rejected() {
        let y = FeatureFrames::zeros(2, 1);
        let cfg = SamplingConfig::default();
        let err = sample_semantic(&y, &Broken, &DiffusionSchedule::default(), &cfg).unwrap_err();
        assert!(matches!(err, Error::InvalidDistribution(_)));
    }
}
