//! End-to-end orchestration: training, enhancement, evaluation and model
//! bundles.

mod bundle;
mod enhance;
mod eval;
mod train;

pub use bundle::{ModelBundle, TokenModel, BUNDLE_FILE, BUNDLE_VERSION};
pub use enhance::{enhance, enhance_batch, enhance_with, with_jobs, Enhanced};
pub use eval::{evaluate, evaluate_pair, EvalPair, EvalReport, UtteranceMetrics, SEG_SNR_CEIL_DB, SEG_SNR_FLOOR_DB};
pub use train::{train_all, PredictorKind, PredictorTrainConfig, TrainConfig, TrainReport};
