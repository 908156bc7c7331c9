use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MaskedExample, Predictor, PredictorOutput, Trainable};
use crate::codec::io::{self, Array};
use crate::codec::softmax_in_place;
use crate::diffusion::Condition;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

const WEIGHTS_MAGIC: &[u8; 8] = b"SISELIN\0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    pub codebook_size: usize,
    /// Token context slots: 1 for the semantic model (its own layer),
    /// `N_a + 1` for the acoustic model (semantic plus every acoustic layer).
    pub n_slots: usize,
    /// Dimension of the `y_en` frames.
    pub cond_dim: usize,
    pub embed_dim: usize,
    /// Standard deviation of the random embedding and projection init.
    pub init_scale: f64,
}

impl LinearConfig {
    pub fn validate(&self) -> Result<()> {
        if self.codebook_size < 1 || self.n_slots < 1 || self.cond_dim < 1 || self.embed_dim < 1 {
            return Err(Error::invalid("linear predictor dimensions must be positive"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::invalid("init scale must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Per-position feature length: slot embeddings, projected `y_en`, and a
    /// one-hot layer index.
    pub fn feature_dim(&self) -> usize {
        self.n_slots * self.embed_dim + self.embed_dim + self.n_slots
    }

    fn emb_offset(&self, slot: usize, token: u32) -> usize {
        (slot * (self.codebook_size + 1) + token as usize) * self.embed_dim
    }

    fn proj_offset(&self) -> usize {
        self.n_slots * (self.codebook_size + 1) * self.embed_dim
    }

    fn w_offset(&self) -> usize {
        self.proj_offset() + self.cond_dim * self.embed_dim
    }

    fn b_offset(&self) -> usize {
        self.w_offset() + self.feature_dim() * self.codebook_size
    }

    pub fn n_params(&self) -> usize {
        self.b_offset() + self.codebook_size
    }
}

/// Position-local linear-softmax predictor. At each position the feature is
/// `concat(E_s[token_s] for each slot s, P^T y_en, onehot(layer))` and the
/// output is `softmax(W^T feature + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor {
    config: LinearConfig,
    params: Vec<f64>,
}

impl LinearPredictor {
    /// Random embeddings and projection; zero output weights and bias, so
    /// the initial output is uniform.
    pub fn new(config: LinearConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut params = vec![0.0; config.n_params()];
        for p in &mut params[..config.w_offset()] {
            *p = config.init_scale * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: LinearConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.n_params() {
            return Err(Error::shape(format!(
                "{} parameters for a model of {}",
                params.len(),
                config.n_params()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite predictor weight"));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &LinearConfig {
        &self.config
    }

    pub fn round_to_f32(&mut self) {
        self.params.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }

    fn check(&self, state: &[u32], cond: &Condition<'_>) -> Result<()> {
        let c = &self.config;
        cond.validate(state.len(), c.codebook_size)?;
        if cond.y_en.dim() != c.cond_dim {
            return Err(Error::shape(format!(
                "y_en dim {} but the predictor expects {}",
                cond.y_en.dim(),
                c.cond_dim
            )));
        }
        let slots = if cond.layer == 0 { 1 } else { cond.n_acoustic() + 1 };
        if slots != c.n_slots || cond.layer >= c.n_slots {
            return Err(Error::shape(format!(
                "condition for layer {} has {slots} slots, predictor has {}",
                cond.layer, c.n_slots
            )));
        }
        if let Some(&bad) = state.iter().find(|&&v| v as usize > c.codebook_size) {
            return Err(Error::TokenOutOfRange {
                index: bad,
                codebook_size: c.codebook_size,
            });
        }
        Ok(())
    }

    fn slot_tokens(&self, pos: usize, state: &[u32], cond: &Condition<'_>) -> Vec<u32> {
        (0..self.config.n_slots)
            .map(|s| cond.slot_token(s, pos, state))
            .collect()
    }

    fn features(&self, tokens: &[u32], y: &[f64], layer: usize, f: &mut [f64]) {
        let c = &self.config;
        let e = c.embed_dim;
        for (s, &t) in tokens.iter().enumerate() {
            let off = c.emb_offset(s, t);
            f[s * e..(s + 1) * e].copy_from_slice(&self.params[off..off + e]);
        }
        let cond = &mut f[c.n_slots * e..(c.n_slots + 1) * e];
        cond.iter_mut().for_each(|v| *v = 0.0);
        let proj = &self.params[c.proj_offset()..c.w_offset()];
        for (&yi, prow) in y.iter().zip(proj.chunks_exact(e)) {
            if yi != 0.0 {
                cond.iter_mut().zip(prow).for_each(|(v, p)| *v += yi * p);
            }
        }
        let onehot = &mut f[(c.n_slots + 1) * e..];
        onehot.iter_mut().for_each(|v| *v = 0.0);
        onehot[layer] = 1.0;
    }

    fn probabilities(&self, f: &[f64], out: &mut [f64]) {
        let c = &self.config;
        let k = c.codebook_size;
        out.copy_from_slice(&self.params[c.b_offset()..c.b_offset() + k]);
        let w = &self.params[c.w_offset()..c.b_offset()];
        for (&fi, wrow) in f.iter().zip(w.chunks_exact(k)) {
            if fi != 0.0 {
                out.iter_mut().zip(wrow).for_each(|(o, wv)| *o += fi * wv);
            }
        }
        softmax_in_place(out);
    }

    /// Loss and gradient contribution of one example, already divided by its
    /// masked count. `None` when nothing is masked.
    fn example_grad(&self, ex: &MaskedExample<'_>) -> Result<Option<(f64, Vec<f64>)>> {
        self.check(&ex.state, &ex.cond)?;
        if ex.target.len() != ex.state.len() {
            return Err(Error::shape("target and state lengths differ"));
        }
        crate::diffusion::check_tokens(ex.target, self.config.codebook_size)?;
        let c = &self.config;
        let k = c.codebook_size;
        let e = c.embed_dim;
        let sentinel = k as u32;
        let masked: Vec<usize> = (0..ex.state.len()).filter(|&l| ex.state[l] == sentinel).collect();
        if masked.is_empty() {
            return Ok(None);
        }
        let scale = 1.0 / masked.len() as f64;
        let fdim = c.feature_dim();
        let mut grad = vec![0.0; c.n_params()];
        let mut f = vec![0.0; fdim];
        let mut p = vec![0.0; k];
        let mut df = vec![0.0; fdim];
        let mut loss = 0.0;
        let (w_off, b_off, p_off) = (c.w_offset(), c.b_offset(), c.proj_offset());
        for &pos in &masked {
            let tokens = self.slot_tokens(pos, &ex.state, &ex.cond);
            let y = ex.cond.y_en.row(pos);
            self.features(&tokens, y, ex.cond.layer, &mut f);
            self.probabilities(&f, &mut p);
            let target = ex.target[pos] as usize;
            loss -= p[target].max(f64::MIN_POSITIVE).ln() * scale;
            // dL/dlogits = (p - onehot) / |M|
            p[target] -= 1.0;
            p.iter_mut().for_each(|v| *v *= scale);
            grad[b_off..b_off + k].iter_mut().zip(&p).for_each(|(g, v)| *g += v);
            let w = &self.params[w_off..b_off];
            for (i, (&fi, wrow)) in f.iter().zip(w.chunks_exact(k)).enumerate() {
                df[i] = wrow.iter().zip(&p).map(|(a, b)| a * b).sum();
                if fi != 0.0 {
                    grad[w_off + i * k..w_off + (i + 1) * k]
                        .iter_mut()
                        .zip(&p)
                        .for_each(|(g, v)| *g += fi * v);
                }
            }
            for (s, &t) in tokens.iter().enumerate() {
                let off = c.emb_offset(s, t);
                grad[off..off + e]
                    .iter_mut()
                    .zip(&df[s * e..(s + 1) * e])
                    .for_each(|(g, d)| *g += d);
            }
            let dcond = &df[c.n_slots * e..(c.n_slots + 1) * e];
            for (i, &yi) in y.iter().enumerate() {
                if yi != 0.0 {
                    grad[p_off + i * e..p_off + (i + 1) * e]
                        .iter_mut()
                        .zip(dcond)
                        .for_each(|(g, d)| *g += yi * d);
                }
            }
        }
        Ok(Some((loss, grad)))
    }

    pub fn to_arrays(&self) -> Vec<Array> {
        let c = &self.config;
        vec![
            Array::new(
                vec![c.n_slots, c.codebook_size + 1, c.embed_dim],
                self.params[..c.proj_offset()].to_vec(),
            ),
            Array::new(vec![c.cond_dim, c.embed_dim], self.params[c.proj_offset()..c.w_offset()].to_vec()),
            Array::new(
                vec![c.feature_dim(), c.codebook_size],
                self.params[c.w_offset()..c.b_offset()].to_vec(),
            ),
            Array::new(vec![c.codebook_size], self.params[c.b_offset()..].to_vec()),
        ]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_arrays(path, WEIGHTS_MAGIC, &self.to_arrays())
    }

    pub fn load(path: impl AsRef<Path>, config: LinearConfig) -> Result<Self> {
        let path = path.as_ref();
        let arrays = io::read_arrays(path, WEIGHTS_MAGIC)?;
        let expected = Self::from_params(config.clone(), vec![0.0; config.n_params()])?.to_arrays();
        if arrays.len() != expected.len() || arrays.iter().zip(&expected).any(|(a, b)| a.dims != b.dims) {
            return Err(Error::format(path, "weight shapes do not match the predictor config"));
        }
        let params = arrays.into_iter().flat_map(|a| a.data).collect();
        Self::from_params(config, params)
    }
}

impl Predictor for LinearPredictor {
    fn codebook_size(&self) -> usize {
        self.config.codebook_size
    }

    fn predict(&self, state: &[u32], cond: &Condition<'_>) -> Result<PredictorOutput> {
        self.check(state, cond)?;
        let k = self.config.codebook_size;
        let mut probs = vec![0.0; state.len() * k];
        let mut f = vec![0.0; self.config.feature_dim()];
        for (pos, out) in probs.chunks_exact_mut(k).enumerate() {
            let tokens = self.slot_tokens(pos, state, cond);
            self.features(&tokens, cond.y_en.row(pos), cond.layer, &mut f);
            self.probabilities(&f, out);
        }
        PredictorOutput::new(state.len(), k, probs)
    }
}

impl Trainable for LinearPredictor {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn loss_and_grad(&self, batch: &[MaskedExample<'_>]) -> Result<(f64, Vec<f64>)> {
        let parts: Vec<Option<(f64, Vec<f64>)>> = batch
            .par_iter()
            .map(|ex| self.example_grad(ex))
            .collect::<Result<_>>()?;
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        let mut n = 0usize;
        // fixed summation order keeps the result independent of threading
        for (l, g) in parts.into_iter().flatten() {
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            n += 1;
        }
        if n == 0 {
            return Err(Error::NoMaskedTargets);
        }
        let inv = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        Ok((loss * inv, grad))
    }
}
