//! Masked discrete diffusion over token layers: the masking schedule,
//! forward corruption, the masked negative log-likelihood, confidence-based
//! reverse sampling and the semantic-then-acoustic orchestration.

mod sampler;
mod schedule;
mod state;
mod train;

pub use sampler::{
    reverse_step, sample_acoustic, sample_layer, sample_layer_observed, sample_semantic,
    sample_token, LayerSampling, SamplingConfig, StepParams,
};
pub use schedule::{sigma, DiffusionSchedule};
pub use state::{Condition, LayerMaskState};
pub use train::{forward_mask, mask_with_probability, masked_nll, train_step, ModelKind, TrainingItem};

pub(crate) use state::check_tokens;
