//! Conditional token predictors `p(z0 | z_t, C)`: an exact Bayes oracle, a
//! smoothed count model and a trainable linear-softmax model, plus small
//! fixed predictors for tests.

mod count;
mod exact;
mod fixed;
mod linear;
mod optim;

pub use count::{ContextQuantizer, CountPredictor, CountTables};
pub use exact::ExactBayes;
pub use fixed::{FixedPredictor, RecordedCall, RecordingPredictor, UniformPredictor};
pub use linear::{LinearConfig, LinearPredictor};
pub use optim::{Optimizer, OptimizerState};

use crate::diffusion::Condition;
use crate::error::{Error, Result};

/// Row tolerance for predictor outputs.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// `L × K` row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorOutput {
    len: usize,
    codebook_size: usize,
    probs: Vec<f64>,
}

impl PredictorOutput {
    /// Wraps `probs` without checking the rows; see [`Self::validate`].
    pub fn new(len: usize, codebook_size: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != len * codebook_size {
            return Err(Error::shape(format!(
                "{} probabilities for {len} positions of {codebook_size} tokens",
                probs.len()
            )));
        }
        Ok(Self {
            len,
            codebook_size,
            probs,
        })
    }

    pub fn uniform(len: usize, codebook_size: usize) -> Self {
        Self {
            len,
            codebook_size,
            probs: vec![1.0 / codebook_size as f64; len * codebook_size],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn row(&self, pos: usize) -> &[f64] {
        &self.probs[pos * self.codebook_size..(pos + 1) * self.codebook_size]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Every entry finite and nonnegative, every row summing to 1 within
    /// [`ROW_SUM_TOLERANCE`].
    pub fn validate(&self) -> Result<()> {
        for pos in 0..self.len {
            let row = self.row(pos);
            if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::InvalidDistribution(format!(
                    "row {pos} has entry {v}"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidDistribution(format!(
                    "row {pos} sums to {s}"
                )));
            }
        }
        Ok(())
    }
}

/// A conditional distribution over the clean tokens of one layer.
pub trait Predictor: Sync {
    fn codebook_size(&self) -> usize;

    /// Row `l` is `p(z0[l] = · | state, cond)`. `state` holds the sentinel
    /// `K` at masked positions.
    fn predict(&self, state: &[u32], cond: &Condition<'_>) -> Result<PredictorOutput>;
}

/// One training sample for the masked loss: clean tokens, the masked state
/// fed to the model, and the condition.
#[derive(Debug, Clone)]
pub struct MaskedExample<'a> {
    pub target: &'a [u32],
    pub state: Vec<u32>,
    pub cond: Condition<'a>,
}

impl MaskedExample<'_> {
    pub fn masked_count(&self, codebook_size: usize) -> usize {
        self.state.iter().filter(|&&v| v as usize == codebook_size).count()
    }
}

/// A predictor with a flat parameter vector and an analytic gradient of the
/// masked loss.
pub trait Trainable: Predictor {
    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// Mean over examples (those with at least one masked position) of the
    /// per-example mean masked negative log-likelihood, and its gradient.
    fn loss_and_grad(&self, batch: &[MaskedExample<'_>]) -> Result<(f64, Vec<f64>)>;
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn codebook_size(&self) -> usize {
        (**self).codebook_size()
    }

    fn predict(&self, state: &[u32], cond: &Condition<'_>) -> Result<PredictorOutput> {
        (**self).predict(state, cond)
    }
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn codebook_size(&self) -> usize {
        (**self).codebook_size()
    }

    fn predict(&self, state: &[u32], cond: &Condition<'_>) -> Result<PredictorOutput> {
        (**self).predict(state, cond)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_validation() {
        PredictorOutput::uniform(3, 7).validate().unwrap();
        let bad = PredictorOutput::new(1, 2, vec![0.5, 0.6]).unwrap();
        assert!(matches!(bad.validate(), Err(Error::InvalidDistribution(_))));
        let neg = PredictorOutput::new(1, 2, vec![1.5, -0.5]).unwrap();
        assert!(neg.validate().is_err());
        let close = PredictorOutput::new(1, 2, vec![0.5, 0.5 + 5e-7]).unwrap();
        close.validate().unwrap();
        assert!(PredictorOutput::new(2, 2, vec![0.5; 3]).is_err());
    }
}
