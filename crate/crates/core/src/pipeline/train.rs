use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bundle::{ModelBundle, TokenModel};
use crate::codec::{total_loss, Codec, CodecConfig, CodecTrainConfig, CodecTrainReport, LossReport, LossTerms};
use crate::corpus::LoadedEntry;
use crate::diffusion::{train_step, Condition, DiffusionSchedule, ModelKind, SamplingConfig, TrainingItem};
use crate::dsp::{mel_loss_multiscale, MelConfig};
use crate::error::{Error, Result};
use crate::features::FeatureFrames;
use crate::predictor::{ContextQuantizer, CountPredictor, LinearConfig, LinearPredictor, Optimizer, OptimizerState};
use crate::rng::{derive_named, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Linear,
    Count,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorTrainConfig {
    pub kind: PredictorKind,
    pub embed_dim: usize,
    pub init_scale: f64,
    pub steps: usize,
    /// Utterances per step, drawn with replacement.
    pub batch_size: usize,
    pub optimizer: Optimizer,
    /// Count-model smoothing.
    pub alpha: f64,
    /// Count-model context encoder: regression target is the clean
    /// bottleneck latents of this many layers, semantic first.
    pub context_layers: usize,
    /// Count-model context codebook size.
    pub context_size: usize,
    pub ridge: f64,
}

const CONTEXT_KMEANS_ITERS: usize = 15;

impl Default for PredictorTrainConfig {
    fn default() -> Self {
        Self {
            kind: PredictorKind::Count,
            embed_dim: 32,
            init_scale: 0.1,
            steps: 400,
            batch_size: 8,
            optimizer: Optimizer::Adam {
                lr: 0.01,
                beta1: 0.5,
                beta2: 0.9,
                eps: 1e-8,
            },
            alpha: 0.05,
            context_layers: 3,
            context_size: 256,
            ridge: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub codec: CodecConfig,
    pub codec_train: CodecTrainConfig,
    pub semantic: PredictorTrainConfig,
    pub acoustic: PredictorTrainConfig,
    pub schedule: DiffusionSchedule,
    pub sampling: SamplingConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            codec: CodecConfig::default(),
            codec_train: CodecTrainConfig::default(),
            semantic: PredictorTrainConfig::default(),
            acoustic: PredictorTrainConfig::default(),
            schedule: DiffusionSchedule::default(),
            sampling: SamplingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub codec: CodecTrainReport,
    /// Codec objective with `rec` the multi-scale mel loss of the clean
    /// round trip; `adv` and `feat` are zero.
    pub codec_loss: LossReport,
    pub semantic_losses: Vec<f64>,
    pub acoustic_losses: Vec<f64>,
}

struct Encoded {
    layers: Vec<Vec<u32>>,
    latents: Vec<FeatureFrames>,
    y_en: FeatureFrames,
}

/// Trains the codec on the clean signals, encodes the corpus and trains the
/// semantic and acoustic token models on (noisy features, clean tokens).
pub fn train_all(entries: &[LoadedEntry], config: &TrainConfig, seed: u64) -> Result<(ModelBundle, TrainReport)> {
    if entries.is_empty() {
        return Err(Error::EmptyInput);
    }
    if config.sampling.acoustic_steps.len() != config.codec.n_acoustic {
        return Err(Error::invalid("acoustic step list length must equal the acoustic layer count"));
    }
    config.sampling.validate()?;
    config.codec.validate()?;
    let clean_features: Vec<FeatureFrames> = entries
        .par_iter()
        .map(|e| config.codec.features(&e.clean))
        .collect::<Result<_>>()?;
    for (e, f) in entries.iter().zip(&clean_features) {
        if e.labels.len() != f.frames() {
            return Err(Error::shape(format!(
                "{}: {} labels for {} frames",
                e.id,
                e.labels.len(),
                f.frames()
            )));
        }
    }
    let all = FeatureFrames::concat(&clean_features)?;
    let labels: Vec<u32> = entries.iter().flat_map(|e| e.labels.iter().copied()).collect();
    let (codec, codec_report) =
        Codec::train(config.codec.clone(), &config.codec_train, &all, &labels, derive_named(seed, "codec"))?;

    let encoded: Vec<Encoded> = entries
        .par_iter()
        .zip(&clean_features)
        .map(|(e, f)| {
            let q = codec.quantize(f)?;
            Ok(Encoded {
                latents: q.latents,
                layers: q.tokens.into_layers(),
                y_en: codec.features(&e.noisy)?,
            })
        })
        .collect::<Result<_>>()?;

    let codec_loss = codec_objective(&codec, entries, &codec_report)?;
    let items: Vec<TrainingItem> = encoded
        .iter()
        .map(|e| TrainingItem {
            layers: &e.layers,
            y_en: &e.y_en,
        })
        .collect();
    let n_acoustic = config.codec.n_acoustic;
    let (semantic, semantic_losses) = train_model(
        &codec,
        &encoded,
        &items,
        &config.semantic,
        ModelKind::Semantic,
        &config.schedule,
        derive_named(seed, "semantic"),
    )?;
    let (acoustic, acoustic_losses) = train_model(
        &codec,
        &encoded,
        &items,
        &config.acoustic,
        ModelKind::Acoustic { n_acoustic },
        &config.schedule,
        derive_named(seed, "acoustic"),
    )?;
    let bundle = ModelBundle {
        codec,
        semantic,
        acoustic,
        schedule: config.schedule,
        sampling: config.sampling.clone(),
    };
    bundle.validate()?;
    Ok((
        bundle,
        TrainReport {
            codec: codec_report,
            codec_loss,
            semantic_losses,
            acoustic_losses,
        },
    ))
}

fn codec_objective(codec: &Codec, entries: &[LoadedEntry], report: &CodecTrainReport) -> Result<LossReport> {
    let scales = MelConfig::default_scales(codec.config().sample_rate);
    let rec: Vec<f64> = entries
        .par_iter()
        .map(|e| mel_loss_multiscale(&e.clean, &codec.round_trip(&e.clean)?, &scales))
        .collect::<Result<_>>()?;
    total_loss(LossTerms {
        rec: rec.iter().sum::<f64>() / rec.len() as f64,
        adv: 0.0,
        feat: 0.0,
        codebook: report.latent_error,
        commit: report.latent_error,
        sem: report.phoneme_loss,
    })
}

/// Fits the count-model context encoder: noisy features regressed onto the
/// clean latents of the first `layers` codec layers.
fn fit_context(encoded: &[Encoded], config: &PredictorTrainConfig, seed: u64) -> Result<ContextQuantizer> {
    let layers = config.context_layers;
    if layers == 0 || encoded.iter().any(|e| e.latents.len() < layers) {
        return Err(Error::invalid(format!("context_layers must be in 1..={}", encoded[0].latents.len())));
    }
    let inputs = FeatureFrames::concat(encoded.iter().map(|e| &e.y_en))?;
    let mut targets = Vec::with_capacity(inputs.frames() * layers * encoded[0].latents[0].dim());
    for e in encoded {
        for f in 0..e.y_en.frames() {
            for lat in &e.latents[..layers] {
                targets.extend_from_slice(lat.row(f));
            }
        }
    }
    let dim = targets.len() / inputs.frames();
    let targets = FeatureFrames::new(inputs.frames(), dim, targets)?;
    ContextQuantizer::fit(&inputs, &targets, config.ridge, config.context_size, CONTEXT_KMEANS_ITERS, seed)
}

fn train_model(
    codec: &Codec,
    encoded: &[Encoded],
    items: &[TrainingItem<'_>],
    config: &PredictorTrainConfig,
    kind: ModelKind,
    schedule: &DiffusionSchedule,
    seed: u64,
) -> Result<(TokenModel, Vec<f64>)> {
    let k = codec.config().codebook_size;
    match config.kind {
        PredictorKind::Count => {
            let context = fit_context(encoded, config, derive_named(seed, "context"))?;
            let mut model = CountPredictor::new(k, config.alpha, context)?;
            let mut examples = Vec::new();
            for item in items {
                match kind {
                    ModelKind::Semantic => examples.push((item.layers[0].as_slice(), Condition::semantic(item.y_en))),
                    ModelKind::Acoustic { n_acoustic } => {
                        for j in 1..=n_acoustic {
                            let lower = item.layers[1..j].iter().map(Vec::as_slice).collect();
                            let cond = Condition::acoustic(item.y_en, &item.layers[0], lower, j, n_acoustic, k)?;
                            examples.push((item.layers[j].as_slice(), cond));
                        }
                    }
                }
            }
            model.fit(examples)?;
            Ok((TokenModel::Count(model), Vec::new()))
        }
        PredictorKind::Linear => {
            let n_slots = match kind {
                ModelKind::Semantic => 1,
                ModelKind::Acoustic { n_acoustic } => n_acoustic + 1,
            };
            let lc = LinearConfig {
                codebook_size: k,
                n_slots,
                cond_dim: codec.config().frame_len,
                embed_dim: config.embed_dim,
                init_scale: config.init_scale,
            };
            let mut model = LinearPredictor::new(lc, derive_named(seed, "init"))?;
            let mut opt = OptimizerState::new(config.optimizer, model.config().n_params())?;
            let mut rng = rng_from_seed(derive_named(seed, "steps"));
            let mut losses = Vec::with_capacity(config.steps);
            let batch_size = config.batch_size.max(1);
            for _ in 0..config.steps {
                let batch: Vec<TrainingItem> = (0..batch_size)
                    .map(|_| items[rng.random_range(0..items.len())])
                    .collect();
                losses.push(train_step(&mut model, &mut opt, &batch, kind, schedule, &mut rng)?);
            }
            model.round_to_f32();
            Ok((TokenModel::Linear(model), losses))
        }
    }
}
