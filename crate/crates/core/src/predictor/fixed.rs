use std::sync::Mutex;

use super::{Predictor, PredictorOutput};
use crate::diffusion::Condition;
use crate::error::{Error, Result};

/// Uniform rows everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformPredictor {
    pub codebook_size: usize,
}

impl Predictor for UniformPredictor {
    fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    fn predict(&self, state: &[u32], _cond: &Condition<'_>) -> Result<PredictorOutput> {
        Ok(PredictorOutput::uniform(state.len(), self.codebook_size))
    }
}

/// Probability one on a fixed token per position, independent of the state.
/// With one token list per layer it serves as an oracle for every layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedPredictor {
    codebook_size: usize,
    layers: Vec<Vec<u32>>,
}

impl FixedPredictor {
    pub fn new(codebook_size: usize, layers: Vec<Vec<u32>>) -> Result<Self> {
        if let Some(&bad) = layers.iter().flatten().find(|&&t| t as usize >= codebook_size) {
            return Err(Error::TokenOutOfRange {
                index: bad,
                codebook_size,
            });
        }
        Ok(Self {
            codebook_size,
            layers,
        })
    }

    /// The same tokens for every layer.
    pub fn single(codebook_size: usize, tokens: Vec<u32>) -> Result<Self> {
        Self::new(codebook_size, vec![tokens])
    }
}

impl Predictor for FixedPredictor {
    fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    fn predict(&self, state: &[u32], cond: &Condition<'_>) -> Result<PredictorOutput> {
        let tokens = if self.layers.len() == 1 {
            &self.layers[0]
        } else {
            self.layers
                .get(cond.layer)
                .ok_or_else(|| Error::invalid(format!("no fixed tokens for layer {}", cond.layer)))?
        };
        if tokens.len() != state.len() {
            return Err(Error::shape("fixed tokens and state differ in length"));
        }
        let k = self.codebook_size;
        let mut probs = vec![0.0; tokens.len() * k];
        for (pos, &t) in tokens.iter().enumerate() {
            probs[pos * k + t as usize] = 1.0;
        }
        PredictorOutput::new(tokens.len(), k, probs)
    }
}

/// Everything a predictor was shown in one call.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedCall {
    pub layer: usize,
    pub state: Vec<u32>,
    pub y_en: Vec<f64>,
    pub y_en_frames: usize,
    pub semantic: Option<Vec<u32>>,
    pub lower: Vec<Vec<u32>>,
    pub upper: Vec<Vec<u32>>,
}

/// Forwards to an inner predictor and logs every call.
#[derive(Debug)]
pub struct RecordingPredictor<P> {
    inner: P,
    calls: Mutex<Vec<RecordedCall>>,
}

impl<P: Predictor> RecordingPredictor<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.calls.lock().map(|c| c.clone()).unwrap_or_default()
    }
}

impl<P: Predictor> Predictor for RecordingPredictor<P> {
    fn codebook_size(&self) -> usize {
        self.inner.codebook_size()
    }

    fn predict(&self, state: &[u32], cond: &Condition<'_>) -> Result<PredictorOutput> {
        let call = RecordedCall {
            layer: cond.layer,
            state: state.to_vec(),
            y_en: cond.y_en.as_slice().to_vec(),
            y_en_frames: cond.y_en.frames(),
            semantic: cond.semantic.map(<[u32]>::to_vec),
            lower: cond.lower.iter().map(|l| l.to_vec()).collect(),
            upper: cond.upper.clone(),
        };
        if let Ok(mut calls) = self.calls.lock() {
            calls.push(call);
        }
        self.inner.predict(state, cond)
    }
}
