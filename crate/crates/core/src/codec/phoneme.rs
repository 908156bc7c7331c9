use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{dot, FeatureFrames};

/// Linear-softmax frame classifier over semantic embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeHead {
    input_dim: usize,
    n_classes: usize,
    /// input_dim × n_classes, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhonemeTrainConfig {
    pub epochs: usize,
    /// Step size relative to the mean squared feature norm.
    pub lr: f64,
}

impl Default for PhonemeTrainConfig {
    fn default() -> Self {
        Self { epochs: 400, lr: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhonemeEval {
    /// Mean cross-entropy in nats.
    pub loss: f64,
    pub accuracy: f64,
}

impl PhonemeHead {
    pub fn zeros(input_dim: usize, n_classes: usize) -> Result<Self> {
        if input_dim == 0 || n_classes == 0 {
            return Err(Error::invalid("phoneme head needs positive input dim and class count"));
        }
        Ok(Self {
            input_dim,
            n_classes,
            weights: vec![0.0; input_dim * n_classes],
            bias: vec![0.0; n_classes],
        })
    }

    pub fn from_parts(input_dim: usize, n_classes: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let mut head = Self::zeros(input_dim, n_classes)?;
        if weights.len() != input_dim * n_classes || bias.len() != n_classes {
            return Err(Error::shape("phoneme head weight shapes do not match"));
        }
        head.weights = weights;
        head.bias = bias;
        Ok(head)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn round_to_f32(&mut self) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }

    fn logits(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (&xi, w) in x.iter().zip(self.weights.chunks_exact(self.n_classes)) {
            if xi != 0.0 {
                out.iter_mut().zip(w).for_each(|(o, wv)| *o += xi * wv);
            }
        }
    }

    /// Class probabilities for one frame.
    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.n_classes];
        self.logits(x, &mut p);
        softmax_in_place(&mut p);
        p
    }

    pub fn predict(&self, features: &FeatureFrames) -> Result<Vec<u32>> {
        self.check(features, None)?;
        Ok(features
            .rows()
            .map(|r| argmax(&self.probabilities(r)) as u32)
            .collect())
    }

    fn check(&self, features: &FeatureFrames, labels: Option<&[u32]>) -> Result<()> {
        if features.dim() != self.input_dim {
            return Err(Error::shape(format!(
                "phoneme head expects dim {}, got {}",
                self.input_dim,
                features.dim()
            )));
        }
        if let Some(labels) = labels {
            if labels.len() != features.frames() {
                return Err(Error::shape(format!(
                    "{} labels for {} frames",
                    labels.len(),
                    features.frames()
                )));
            }
            if let Some(&l) = labels.iter().find(|&&l| l as usize >= self.n_classes) {
                return Err(Error::invalid(format!("label {l} out of range")));
            }
        }
        Ok(())
    }

    /// Mean cross-entropy and frame accuracy.
    pub fn evaluate(&self, features: &FeatureFrames, labels: &[u32]) -> Result<PhonemeEval> {
        self.check(features, Some(labels))?;
        if labels.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut loss = 0.0;
        let mut correct = 0usize;
        for (r, &l) in features.rows().zip(labels) {
            let p = self.probabilities(r);
            loss -= p[l as usize].max(f64::MIN_POSITIVE).ln();
            if argmax(&p) == l as usize {
                correct += 1;
            }
        }
        let n = labels.len() as f64;
        Ok(PhonemeEval {
            loss: loss / n,
            accuracy: correct as f64 / n,
        })
    }

    /// Full-batch gradient descent on the mean cross-entropy, starting from
    /// the current weights. Identical (row, label) pairs are merged first.
    pub fn train(&mut self, features: &FeatureFrames, labels: &[u32], config: &PhonemeTrainConfig) -> Result<PhonemeEval> {
        self.check(features, Some(labels))?;
        if labels.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut unique: BTreeMap<(Vec<u64>, u32), (usize, f64)> = BTreeMap::new();
        for (i, (r, &l)) in features.rows().zip(labels).enumerate() {
            let key = (r.iter().map(|v| v.to_bits()).collect(), l);
            unique.entry(key).or_insert((i, 0.0)).1 += 1.0;
        }
        let n = labels.len() as f64;
        let rows: Vec<(&[f64], usize, f64)> = unique
            .iter()
            .map(|((_, l), &(i, count))| (features.row(i), *l as usize, count / n))
            .collect();
        let mean_sq: f64 = rows.iter().map(|(r, _, w)| w * dot(r, r)).sum();
        // softmax cross-entropy has curvature at most (‖x‖² + 1)/2
        let step = config.lr / (mean_sq + 1.0);

        let c = self.n_classes;
        let mut grad_w = vec![0.0; self.weights.len()];
        let mut grad_b = vec![0.0; c];
        let mut p = vec![0.0; c];
        for _ in 0..config.epochs {
            grad_w.iter_mut().for_each(|g| *g = 0.0);
            grad_b.iter_mut().for_each(|g| *g = 0.0);
            for &(r, l, w) in &rows {
                self.logits(r, &mut p);
                softmax_in_place(&mut p);
                p[l] -= 1.0;
                p.iter_mut().for_each(|v| *v *= w);
                grad_b.iter_mut().zip(&p).for_each(|(g, v)| *g += v);
                for (&xi, g) in r.iter().zip(grad_w.chunks_exact_mut(c)) {
                    if xi != 0.0 {
                        g.iter_mut().zip(&p).for_each(|(gv, v)| *gv += xi * v);
                    }
                }
            }
            self.weights.iter_mut().zip(&grad_w).for_each(|(w, g)| *w -= step * g);
            self.bias.iter_mut().zip(&grad_b).for_each(|(b, g)| *b -= step * g);
        }
        self.evaluate(features, labels)
    }
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    v.iter_mut().for_each(|x| *x /= s);
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_ln_c() {
        let head = PhonemeHead::zeros(5, 12).unwrap();
        let x = FeatureFrames::from_rows(&[vec![1.0, -2.0, 0.0, 3.0, 0.5], vec![0.0; 5]]).unwrap();
        let e = head.evaluate(&x, &[3, 11]).unwrap();
        assert_eq!(e.loss, 12f64.ln());
    }

    #[test]
    fn single_class_is_learned() {
        let mut head = PhonemeHead::zeros(2, 4).unwrap();
        let x = FeatureFrames::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.3, 0.3]]).unwrap();
        let e = head.train(&x, &[2, 2, 2], &PhonemeTrainConfig::default()).unwrap();
        assert_eq!(e.accuracy, 1.0);
    }

    #[test]
    fn separable_classes() {
        let rows: Vec<Vec<f64>> = (0..60).map(|i| {
            let c = (i % 3) as f64;
            vec![c, 1.0 - c * 0.5, 0.1 * (i as f64 / 60.0)]
        }).collect();
        let labels: Vec<u32> = (0..60).map(|i| (i % 3) as u32).collect();
        let x = FeatureFrames::from_rows(&rows).unwrap();
        let mut head = PhonemeHead::zeros(3, 3).unwrap();
        let before = head.evaluate(&x, &labels).unwrap().loss;
        let e = head.train(&x, &labels, &PhonemeTrainConfig { epochs: 3000, lr: 1.0 }).unwrap();
        assert!(e.loss < 0.5 * before, "{e:?}");
        assert_eq!(e.accuracy, 1.0);
    }

    #[test]
    fn label_mismatch() {
        let head = PhonemeHead::zeros(2, 3).unwrap();
        let x = FeatureFrames::zeros(2, 2);
        assert!(head.evaluate(&x, &[0]).is_err());
        assert!(head.evaluate(&x, &[0, 3]).is_err());
    }
}
