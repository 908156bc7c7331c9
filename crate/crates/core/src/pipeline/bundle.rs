use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::Codec;
use crate::diffusion::{Condition, DiffusionSchedule, SamplingConfig};
use crate::error::{Error, Result};
use crate::predictor::{
    ContextQuantizer, CountPredictor, LinearConfig, LinearPredictor, Predictor, PredictorOutput,
};

pub const BUNDLE_FILE: &str = "bundle.json";
pub const BUNDLE_VERSION: u32 = 1;

/// A trained token model for one diffusion stage.
#[derive(Debug, Clone, PartialEq)]
pub enum TokenModel {
    Linear(LinearPredictor),
    Count(CountPredictor),
}

impl Predictor for TokenModel {
    fn codebook_size(&self) -> usize {
        match self {
            TokenModel::Linear(m) => m.codebook_size(),
            TokenModel::Count(m) => m.codebook_size(),
        }
    }

    fn predict(&self, state: &[u32], cond: &Condition<'_>) -> Result<PredictorOutput> {
        match self {
            TokenModel::Linear(m) => m.predict(state, cond),
            TokenModel::Count(m) => m.predict(state, cond),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ModelEntry {
    Linear { config: LinearConfig, file: String },
    Count { file: String, context: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BundleManifest {
    version: u32,
    semantic: ModelEntry,
    acoustic: ModelEntry,
    schedule: DiffusionSchedule,
    sampling: SamplingConfig,
}

/// Everything needed to enhance audio: the codec, both token models, the
/// schedule and the default sampling settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub codec: Codec,
    pub semantic: TokenModel,
    pub acoustic: TokenModel,
    pub schedule: DiffusionSchedule,
    pub sampling: SamplingConfig,
}

impl ModelBundle {
    pub fn validate(&self) -> Result<()> {
        let k = self.codec.config().codebook_size;
        if self.semantic.codebook_size() != k || self.acoustic.codebook_size() != k {
            return Err(Error::shape("token model codebook size differs from the codec"));
        }
        if self.sampling.acoustic_steps.len() != self.codec.config().n_acoustic {
            return Err(Error::shape(format!(
                "{} acoustic step counts for {} acoustic layers",
                self.sampling.acoustic_steps.len(),
                self.codec.config().n_acoustic
            )));
        }
        self.sampling.validate()
    }

    fn save_model(model: &TokenModel, dir: &Path, stem: &str) -> Result<ModelEntry> {
        Ok(match model {
            TokenModel::Linear(m) => {
                let file = format!("{stem}.bin");
                m.save(dir.join(&file))?;
                ModelEntry::Linear {
                    config: m.config().clone(),
                    file,
                }
            }
            TokenModel::Count(m) => {
                let file = format!("{stem}_counts.json");
                let context = format!("{stem}_context.bin");
                m.save_json(dir.join(&file))?;
                m.quantizer().save(dir.join(&context))?;
                ModelEntry::Count { file, context }
            }
        })
    }

    fn load_model(entry: &ModelEntry, dir: &Path, codec: &Codec) -> Result<TokenModel> {
        let check = |file: &str| -> Result<()> {
            if Path::new(file).components().count() != 1 {
                return Err(Error::format(dir.join(BUNDLE_FILE), format!("bad model path {file}")));
            }
            Ok(())
        };
        Ok(match entry {
            ModelEntry::Linear { config, file } => {
                check(file)?;
                TokenModel::Linear(LinearPredictor::load(dir.join(file), config.clone())?)
            }
            ModelEntry::Count { file, context } => {
                check(file)?;
                check(context)?;
                let quantizer = ContextQuantizer::load(dir.join(context))?;
                if quantizer.in_dim() != codec.config().frame_len {
                    return Err(Error::format(dir.join(context), "context map does not match the frame length"));
                }
                TokenModel::Count(CountPredictor::load_json(dir.join(file), quantizer)?)
            }
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.codec.save(dir)?;
        let manifest = BundleManifest {
            version: BUNDLE_VERSION,
            semantic: Self::save_model(&self.semantic, dir, "semantic")?,
            acoustic: Self::save_model(&self.acoustic, dir, "acoustic")?,
            schedule: self.schedule,
            sampling: self.sampling.clone(),
        };
        let path = dir.join(BUNDLE_FILE);
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(BUNDLE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: BundleManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        if manifest.version != BUNDLE_VERSION {
            return Err(Error::format(&path, format!("unsupported bundle version {}", manifest.version)));
        }
        let codec = Codec::load(dir)?;
        let semantic = Self::load_model(&manifest.semantic, dir, &codec)?;
        let acoustic = Self::load_model(&manifest.acoustic, dir, &codec)?;
        let bundle = Self {
            codec,
            semantic,
            acoustic,
            schedule: manifest.schedule,
            sampling: manifest.sampling,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}
