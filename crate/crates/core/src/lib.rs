//! Semantic-information-based step-by-step speech enhancement at desk scale:
//! a factorized residual-VQ codec, masked discrete diffusion over its token
//! layers, and a synthetic noisy-speech corpus.

pub mod audio;
pub mod codec;
pub mod corpus;
pub mod diffusion;
pub mod dsp;
pub mod error;
pub mod features;
pub mod pipeline;
pub mod predictor;
pub mod rng;

pub use audio::AudioBuffer;
pub use codec::{Codec, CodecConfig, FactorizedTokens};
pub use corpus::{CorpusConfig, CorpusManifest};
pub use diffusion::{DiffusionSchedule, SamplingConfig};
pub use error::{Error, Result};
pub use features::FeatureFrames;
pub use pipeline::{EvalReport, ModelBundle, TrainConfig};
pub use predictor::{Predictor, PredictorOutput};
