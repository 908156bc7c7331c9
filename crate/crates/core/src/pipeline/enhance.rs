use rayon::prelude::*;

use super::bundle::ModelBundle;
use crate::audio::AudioBuffer;
use crate::codec::{Codec, FactorizedTokens};
use crate::diffusion::{sample_acoustic, sample_semantic, DiffusionSchedule, SamplingConfig};
use crate::error::{Error, Result};
use crate::predictor::Predictor;
use crate::rng::derive_named;

#[derive(Debug, Clone, PartialEq)]
pub struct Enhanced {
    pub audio: AudioBuffer,
    pub tokens: FactorizedTokens,
}

/// Noisy audio → semantic tokens → acoustic tokens → decoded audio of the
/// same length, with explicit models.
pub fn enhance_with(
    codec: &Codec,
    semantic: &(impl Predictor + ?Sized),
    acoustic: &(impl Predictor + ?Sized),
    schedule: &DiffusionSchedule,
    sampling: &SamplingConfig,
    noisy: &AudioBuffer,
) -> Result<Enhanced> {
    if noisy.is_empty() {
        return Err(Error::EmptyInput);
    }
    let y_en = codec.features(noisy)?;
    let zs = sample_semantic(&y_en, semantic, schedule, sampling)?;
    let za = sample_acoustic(&y_en, &zs, acoustic, schedule, sampling)?;
    let mut layers = Vec::with_capacity(za.len() + 1);
    layers.push(zs);
    layers.extend(za);
    let tokens = FactorizedTokens::new(layers, codec.config().codebook_size)?;
    let audio = codec.decode(&tokens, Some(noisy.len()))?;
    Ok(Enhanced { audio, tokens })
}

/// Enhances with the bundle's models; `sampling` overrides the bundle
/// defaults when given.
pub fn enhance(bundle: &ModelBundle, noisy: &AudioBuffer, sampling: Option<&SamplingConfig>) -> Result<Enhanced> {
    let sampling = sampling.unwrap_or(&bundle.sampling);
    enhance_with(&bundle.codec, &bundle.semantic, &bundle.acoustic, &bundle.schedule, sampling, noisy)
}

/// Runs `f` on a pool of `jobs` threads, or on the global pool when
/// `jobs == 0`.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {jobs} worker threads: {e}")))?;
    Ok(pool.install(f))
}

/// Enhances many utterances. Utterance `id` samples with seed
/// `derive_named(sampling.seed, id)`, so results do not depend on order or
/// on `jobs`.
pub fn enhance_batch(
    bundle: &ModelBundle,
    inputs: &[(String, AudioBuffer)],
    sampling: Option<&SamplingConfig>,
    jobs: usize,
) -> Result<Vec<Enhanced>> {
    let base = sampling.unwrap_or(&bundle.sampling);
    with_jobs(jobs, || {
        inputs
            .par_iter()
            .map(|(id, audio)| {
                let cfg = SamplingConfig {
                    seed: derive_named(base.seed, id),
                    ..base.clone()
                };
                enhance(bundle, audio, Some(&cfg))
            })
            .collect::<Result<Vec<_>>>()
    })?
}
