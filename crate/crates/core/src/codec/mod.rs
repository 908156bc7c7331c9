//! Factorized semantic/acoustic codec: a frame transform followed by
//! bottlenecked residual vector quantization. Layer 0 is the semantic layer,
//! supervised by a phoneme head; the remaining layers are acoustic.

mod codebook;
pub mod io;
mod loss;
mod phoneme;
mod projection;
mod quantizer;

pub use codebook::{kmeans_init, Codebook, KMeansResult};
pub use loss::{
    total_loss, LossReport, LossTerms, LAMBDA_ADV, LAMBDA_CODEBOOK, LAMBDA_COMMIT, LAMBDA_FEAT,
    LAMBDA_REC, LAMBDA_SEM,
};
pub use phoneme::{PhonemeEval, PhonemeHead, PhonemeTrainConfig};
pub use projection::BottleneckProjection;
pub use quantizer::{dequantize, projection_for, quantize, FactorizedTokens, Quantized};

pub(crate) use phoneme::{argmax, softmax_in_place};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::dsp::FrameTransform;
use crate::error::{Error, Result};
use crate::features::FeatureFrames;
use crate::rng::derive_seed;
use io::Array;

pub const CODEC_FILE: &str = "codec.json";
pub const CODEBOOKS_FILE: &str = "codebooks.bin";
pub const PROJECTION_FILE: &str = "projection.bin";
pub const PHONEME_HEAD_FILE: &str = "phoneme_head.bin";

const CODEBOOKS_MAGIC: &[u8; 8] = b"SISECBK\0";
const PROJECTION_MAGIC: &[u8; 8] = b"SISEPRJ\0";
const PHONEME_MAGIC: &[u8; 8] = b"SISEPHN\0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    /// Entries per codebook (K), including the frozen zero entry.
    pub codebook_size: usize,
    /// Bottleneck dimension (d).
    pub dim: usize,
    /// Acoustic layer count (N_a).
    pub n_acoustic: usize,
    pub frame_len: usize,
    /// Phone class count (C).
    pub n_classes: usize,
    pub sample_rate: u32,
    /// Power-law exponent applied to transform coefficients before
    /// quantization (`sign(c)·|c|^a`) and inverted after decoding. 1 is
    /// linear; smaller values spend more precision on quiet frames and bands.
    pub compand: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            codebook_size: 1024,
            dim: 8,
            n_acoustic: 5,
            frame_len: 200,
            n_classes: 12,
            sample_rate: 16000,
            compand: 0.7,
        }
    }
}

impl CodecConfig {
    pub fn n_layers(&self) -> usize {
        self.n_acoustic + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.codebook_size < 2 || self.codebook_size > u16::MAX as usize + 1 {
            return Err(Error::invalid("codebook size must be in 2..=65536"));
        }
        if self.dim == 0 || self.dim > self.frame_len {
            return Err(Error::invalid("bottleneck dim must be in 1..=frame_len"));
        }
        if self.n_classes == 0 || self.sample_rate == 0 {
            return Err(Error::invalid("class count and sample rate must be positive"));
        }
        if !(self.compand > 0.0 && self.compand <= 1.0) {
            return Err(Error::invalid(format!("compand exponent {} must be in (0, 1]", self.compand)));
        }
        Ok(())
    }

    /// Codec-domain features of `audio`: the frame transform followed by
    /// companding.
    pub fn features(&self, audio: &AudioBuffer) -> Result<FeatureFrames> {
        let mut frames = FrameTransform::new(self.frame_len)?.forward(audio)?;
        compand_in_place(frames.as_mut_slice(), self.compand);
        Ok(frames)
    }
}

fn compand_in_place(values: &mut [f64], exponent: f64) {
    if exponent != 1.0 {
        values.iter_mut().for_each(|v| *v = v.signum() * v.abs().powf(exponent));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecTrainConfig {
    pub kmeans_iters: usize,
    pub ema_epochs: usize,
    pub ema_batch: usize,
    pub ema_decay: f64,
    /// Weight pulling semantic centroids toward class means, per unit λ_sem.
    pub semantic_pull_per_lambda: f64,
    /// Fit a separate PCA projection for every layer's residual instead of
    /// one shared projection.
    pub per_layer_projection: bool,
    pub phoneme: PhonemeTrainConfig,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        Self {
            kmeans_iters: 25,
            ema_epochs: 2,
            ema_batch: 4096,
            ema_decay: 0.99,
            semantic_pull_per_lambda: 0.01,
            per_layer_projection: true,
            phoneme: PhonemeTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecTrainReport {
    /// k-means distortion history per layer.
    pub distortion: Vec<Vec<f64>>,
    /// Mean squared residual energy per frame after each layer.
    pub residual_energy: Vec<f64>,
    pub phoneme_loss: f64,
    pub phoneme_accuracy: f64,
    pub latent_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codec {
    config: CodecConfig,
    transform: FrameTransform,
    codebooks: Vec<Codebook>,
    projections: Vec<BottleneckProjection>,
    phoneme_head: PhonemeHead,
}

impl Codec {
    pub fn new(
        config: CodecConfig,
        codebooks: Vec<Codebook>,
        projections: Vec<BottleneckProjection>,
        phoneme_head: PhonemeHead,
    ) -> Result<Self> {
        config.validate()?;
        if codebooks.len() != config.n_layers() {
            return Err(Error::shape(format!(
                "{} codebooks for {} layers",
                codebooks.len(),
                config.n_layers()
            )));
        }
        if codebooks.iter().any(|c| c.size() != config.codebook_size || c.dim() != config.dim) {
            return Err(Error::shape("codebook shape does not match the codec config"));
        }
        if projections.len() != 1 && projections.len() != codebooks.len() {
            return Err(Error::shape("expected one shared projection or one per layer"));
        }
        if projections
            .iter()
            .any(|p| p.dim() != config.dim || p.input_dim() != config.frame_len)
        {
            return Err(Error::shape("projection shape does not match the codec config"));
        }
        if phoneme_head.input_dim() != config.frame_len || phoneme_head.n_classes() != config.n_classes {
            return Err(Error::shape("phoneme head shape does not match the codec config"));
        }
        let transform = FrameTransform::new(config.frame_len)?;
        Ok(Self {
            config,
            transform,
            codebooks,
            projections,
            phoneme_head,
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn codebooks(&self) -> &[Codebook] {
        &self.codebooks
    }

    pub fn projections(&self) -> &[BottleneckProjection] {
        &self.projections
    }

    pub fn phoneme_head(&self) -> &PhonemeHead {
        &self.phoneme_head
    }

    pub fn transform(&self) -> &FrameTransform {
        &self.transform
    }

    pub fn features(&self, audio: &AudioBuffer) -> Result<FeatureFrames> {
        self.check_rate(audio)?;
        let mut frames = self.transform.forward(audio)?;
        compand_in_place(frames.as_mut_slice(), self.config.compand);
        Ok(frames)
    }

    fn check_rate(&self, audio: &AudioBuffer) -> Result<()> {
        if audio.sample_rate() != self.config.sample_rate {
            return Err(Error::invalid(format!(
                "audio is {} Hz, codec expects {} Hz",
                audio.sample_rate(),
                self.config.sample_rate
            )));
        }
        Ok(())
    }

    pub fn quantize(&self, features: &FeatureFrames) -> Result<Quantized> {
        quantize(features, &self.codebooks, &self.projections)
    }

    pub fn dequantize(&self, tokens: &FactorizedTokens) -> Result<FeatureFrames> {
        dequantize(tokens, &self.codebooks, &self.projections)
    }

    pub fn encode(&self, audio: &AudioBuffer) -> Result<FactorizedTokens> {
        Ok(self.quantize(&self.features(audio)?)?.tokens)
    }

    /// Decodes to `out_len` samples, or every frame when `None`.
    pub fn decode(&self, tokens: &FactorizedTokens, out_len: Option<usize>) -> Result<AudioBuffer> {
        let mut features = self.dequantize(tokens)?;
        compand_in_place(features.as_mut_slice(), 1.0 / self.config.compand);
        let len = out_len.unwrap_or(tokens.len() * self.config.frame_len);
        self.transform.inverse(&features, len, self.config.sample_rate)
    }

    /// `decode(encode(audio))` at the input length.
    pub fn round_trip(&self, audio: &AudioBuffer) -> Result<AudioBuffer> {
        let tokens = self.encode(audio)?;
        self.decode(&tokens, Some(audio.len()))
    }

    /// Fits projections and codebooks layer by layer on `features` (as
    /// produced by [`CodecConfig::features`]), then the
    /// phoneme head on the semantic embeddings. Every learned value is
    /// rounded to `f32` so that a saved and reloaded codec is identical.
    pub fn train(
        config: CodecConfig,
        train: &CodecTrainConfig,
        features: &FeatureFrames,
        labels: &[u32],
        seed: u64,
    ) -> Result<(Self, CodecTrainReport)> {
        config.validate()?;
        if features.dim() != config.frame_len {
            return Err(Error::shape("training features do not match the frame length"));
        }
        if labels.len() != features.frames() {
            return Err(Error::shape("label count does not match training frames"));
        }
        if features.frames() < config.codebook_size - 1 {
            return Err(Error::invalid(format!(
                "{} training frames cannot fit {} codebook entries",
                features.frames(),
                config.codebook_size - 1
            )));
        }
        let n = config.n_layers();
        let mut projections = Vec::new();
        let mut codebooks = Vec::with_capacity(n);
        let mut distortion = Vec::with_capacity(n);
        let mut residual_energy = Vec::with_capacity(n);
        let mut resid = features.clone();
        for layer in 0..n {
            if layer == 0 || train.per_layer_projection {
                let mut p = BottleneckProjection::fit_pca(&resid, config.dim)?;
                p.round_to_f32();
                projections.push(p);
            }
            let proj = projection_for(&projections, layer).clone();
            let latent = proj.project_frames(&resid)?;
            let layer_seed = derive_seed(seed, layer as u64);
            let km = kmeans_init(&latent, config.codebook_size, train.kmeans_iters, layer_seed)?;
            distortion.push(km.distortion);
            let mut cb = km.codebook;
            let pull = if layer == 0 {
                (train.semantic_pull_per_lambda * LAMBDA_SEM).min(1.0)
            } else {
                0.0
            };
            for _ in 0..train.ema_epochs {
                for start in (0..latent.frames()).step_by(train.ema_batch.max(1)) {
                    let end = (start + train.ema_batch.max(1)).min(latent.frames());
                    let batch = FeatureFrames::new(
                        end - start,
                        config.dim,
                        latent.as_slice()[start * config.dim..end * config.dim].to_vec(),
                    )?;
                    let assign: Vec<usize> = cb.assign(&batch)?.into_iter().map(|a| a.0).collect();
                    if pull > 0.0 {
                        cb.ema_update_supervised(
                            &batch,
                            &assign,
                            &labels[start..end],
                            config.n_classes,
                            train.ema_decay,
                            pull,
                        )?;
                    } else {
                        cb.ema_update(&batch, &assign, train.ema_decay)?;
                    }
                }
            }
            cb.round_to_f32();
            let q = quantize(&resid, std::slice::from_ref(&cb), std::slice::from_ref(&proj))?;
            let mut next = resid.clone();
            for f in 0..next.frames() {
                proj.up_add(cb.entry(q.tokens.layer(0)[f] as usize), -1.0, next.row_mut(f));
            }
            resid = next;
            let energy = resid.as_slice().iter().map(|v| v * v).sum::<f64>() / resid.frames() as f64;
            residual_energy.push(energy);
            codebooks.push(cb);
        }

        let q = quantize(features, &codebooks, &projections)?;
        let mut head = PhonemeHead::zeros(config.frame_len, config.n_classes)?;
        head.train(&q.semantic_emb, labels, &train.phoneme)?;
        head.round_to_f32();
        let eval = head.evaluate(&q.semantic_emb, labels)?;
        let latent_error = q.latent_error(&codebooks);
        let codec = Self::new(config, codebooks, projections, head)?;
        Ok((
            codec,
            CodecTrainReport {
                distortion,
                residual_energy,
                phoneme_loss: eval.loss,
                phoneme_accuracy: eval.accuracy,
                latent_error,
            },
        ))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CODEC_FILE);
        let mut text = serde_json::to_string_pretty(&self.config).map_err(|e| Error::json(&path, e))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

        let (k, d) = (self.config.codebook_size, self.config.dim);
        let mut arrays = Vec::new();
        for cb in &self.codebooks {
            arrays.push(Array::new(vec![k, d], cb.entries().to_vec()));
            arrays.push(Array::new(vec![k], cb.usage().to_vec()));
        }
        io::write_arrays(dir.join(CODEBOOKS_FILE), CODEBOOKS_MAGIC, &arrays)?;

        let arrays: Vec<Array> = self
            .projections
            .iter()
            .map(|p| Array::new(vec![p.dim(), p.input_dim()], p.down_rows().to_vec()))
            .collect();
        io::write_arrays(dir.join(PROJECTION_FILE), PROJECTION_MAGIC, &arrays)?;

        let h = &self.phoneme_head;
        io::write_arrays(
            dir.join(PHONEME_HEAD_FILE),
            PHONEME_MAGIC,
            &[
                Array::new(vec![h.input_dim(), h.n_classes()], h.weights().to_vec()),
                Array::new(vec![h.n_classes()], h.bias().to_vec()),
            ],
        )
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(CODEC_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let config: CodecConfig = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        config.validate()?;
        let (k, d) = (config.codebook_size, config.dim);

        let path = dir.join(CODEBOOKS_FILE);
        let arrays = io::read_arrays(&path, CODEBOOKS_MAGIC)?;
        if arrays.len() != 2 * config.n_layers() {
            return Err(Error::format(&path, "codebook count does not match codec.json"));
        }
        let codebooks = arrays
            .chunks_exact(2)
            .map(|pair| {
                if pair[0].dims != [k, d] || pair[1].dims != [k] {
                    return Err(Error::format(&path, "codebook shape does not match codec.json"));
                }
                Codebook::new(k, d, pair[0].data.clone(), pair[1].data.clone())
                    .map_err(|e| Error::format(&path, e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;

        let path = dir.join(PROJECTION_FILE);
        let projections = io::read_arrays(&path, PROJECTION_MAGIC)?
            .into_iter()
            .map(|a| match a.dims[..] {
                [rows, cols] => BottleneckProjection::from_rows(rows, cols, a.data),
                _ => Err(Error::format(&path, "projection must be a matrix")),
            })
            .collect::<Result<Vec<_>>>()?;

        let path = dir.join(PHONEME_HEAD_FILE);
        let head = match &io::read_arrays(&path, PHONEME_MAGIC)?[..] {
            [w, b] if w.dims.len() == 2 && b.dims.len() == 1 => {
                PhonemeHead::from_parts(w.dims[0], w.dims[1], w.data.clone(), b.data.clone())?
            }
            _ => return Err(Error::format(&path, "expected weight matrix and bias")),
        };
        Self::new(config, codebooks, projections, head)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn small_config() -> CodecConfig {
        CodecConfig {
            codebook_size: 16,
            dim: 4,
            n_acoustic: 5,
            frame_len: 20,
            n_classes: 3,
            sample_rate: 8000,
            compand: 1.0,
        }
    }

    fn training_data(n: usize) -> (FeatureFrames, Vec<u32>) {
        let mut rng = rng_from_seed(9);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let class = (i % 3) as u32;
            let row: Vec<f64> = (0..20)
                .map(|j| {
                    let base = if j % 3 == class as usize { 1.0 } else { 0.0 };
                    base + 0.2 * rng.sample::<f64, _>(StandardNormal) / (1.0 + j as f64)
                })
                .collect();
            rows.push(row);
            labels.push(class);
        }
        (FeatureFrames::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn training_is_deterministic_and_persists() {
        let (x, y) = training_data(300);
        let cfg = small_config();
        let (a, report) = Codec::train(cfg.clone(), &CodecTrainConfig::default(), &x, &y, 5).unwrap();
        let (b, _) = Codec::train(cfg, &CodecTrainConfig::default(), &x, &y, 5).unwrap();
        assert_eq!(a, b);
        for w in report.residual_energy.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(report.phoneme_accuracy > 0.9, "{report:?}");

        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        let loaded = Codec::load(dir.path()).unwrap();
        assert_eq!(loaded, a);
        let dir2 = tempfile::tempdir().unwrap();
        loaded.save(dir2.path()).unwrap();
        for f in [CODEC_FILE, CODEBOOKS_FILE, PROJECTION_FILE, PHONEME_HEAD_FILE] {
            assert_eq!(
                fs::read(dir.path().join(f)).unwrap(),
                fs::read(dir2.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn audio_round_trip_shapes() {
        let (x, y) = training_data(300);
        let (codec, _) = Codec::train(small_config(), &CodecTrainConfig::default(), &x, &y, 1).unwrap();
        let audio = AudioBuffer::new(vec![0.1; 45], 8000).unwrap();
        let tokens = codec.encode(&audio).unwrap();
        assert_eq!(tokens.len(), 3);
        assert_eq!(tokens.n_layers(), 6);
        assert_eq!(codec.round_trip(&audio).unwrap().len(), 45);
        assert_eq!(codec.decode(&tokens, None).unwrap().len(), 60);
        let wrong_rate = AudioBuffer::new(vec![0.1; 45], 16000).unwrap();
        assert!(codec.encode(&wrong_rate).is_err());
    }

    #[test]
    fn compand_inverts() {
        let orig = vec![-2.5, -1e-4, 0.0, 3e-3, 0.7, 12.0];
        let mut v = orig.clone();
        compand_in_place(&mut v, 0.7);
        assert!((v[5] - 12f64.powf(0.7)).abs() < 1e-12 && v[0] < 0.0);
        compand_in_place(&mut v, 1.0 / 0.7);
        for (a, b) in v.iter().zip(&orig) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        let bad = CodecConfig {
            compand: 0.0,
            ..CodecConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn too_little_training_data() {
        let (x, y) = training_data(10);
        assert!(Codec::train(small_config(), &CodecTrainConfig::default(), &x, &y, 1).is_err());
    }
}
