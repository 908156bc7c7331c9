use super::{Predictor, PredictorOutput};
use crate::diffusion::Condition;
use crate::error::{Error, Result};

/// Exact posterior marginals of an explicit joint distribution over token
/// sequences. Row `l` is `p(z0[l] = v | unmasked positions of the state)`,
/// computed by summing over every sequence of the joint. The condition is
/// not used.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactBayes {
    codebook_size: usize,
    len: usize,
    /// Support sequences with their (normalized) probabilities.
    support: Vec<(Vec<u32>, f64)>,
}

impl ExactBayes {
    /// From `(sequence, weight)` pairs; weights are normalized.
    pub fn new(codebook_size: usize, len: usize, joint: Vec<(Vec<u32>, f64)>) -> Result<Self> {
        if codebook_size == 0 || len == 0 {
            return Err(Error::invalid("joint needs positive K and L"));
        }
        let mut total = 0.0;
        for (seq, w) in &joint {
            if seq.len() != len {
                return Err(Error::shape(format!("sequence of length {} in a length-{len} joint", seq.len())));
            }
            if let Some(&t) = seq.iter().find(|&&t| t as usize >= codebook_size) {
                return Err(Error::TokenOutOfRange { index: t, codebook_size });
            }
            if !(w.is_finite() && *w >= 0.0) {
                return Err(Error::invalid(format!("joint weight {w}")));
            }
            total += w;
        }
        if !(total > 0.0) {
            return Err(Error::invalid("joint has no mass"));
        }
        let support = joint
            .into_iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(s, w)| (s, w / total))
            .collect();
        Ok(Self {
            codebook_size,
            len,
            support,
        })
    }

    /// From a dense table of `K^L` probabilities, indexed with position 0 as
    /// the most significant digit.
    pub fn from_dense(codebook_size: usize, len: usize, table: &[f64]) -> Result<Self> {
        let expected = (codebook_size as u64)
            .checked_pow(len as u32)
            .filter(|&n| n <= 1 << 24)
            .ok_or_else(|| Error::invalid("joint table too large to enumerate"))?;
        if table.len() as u64 != expected {
            return Err(Error::shape(format!("{} entries for a K^L = {expected} table", table.len())));
        }
        let joint = table
            .iter()
            .enumerate()
            .map(|(idx, &p)| (Self::sequence(idx, codebook_size, len), p))
            .collect();
        Self::new(codebook_size, len, joint)
    }

    fn sequence(mut idx: usize, k: usize, len: usize) -> Vec<u32> {
        let mut seq = vec![0u32; len];
        for slot in seq.iter_mut().rev() {
            *slot = (idx % k) as u32;
            idx /= k;
        }
        seq
    }

    pub fn support(&self) -> &[(Vec<u32>, f64)] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn contains(&self, seq: &[u32]) -> bool {
        self.support.iter().any(|(s, _)| s == seq)
    }

    /// Unconditional marginals `p(z0[l] = v)`.
    pub fn marginals(&self) -> PredictorOutput {
        self.posterior(&vec![self.codebook_size as u32; self.len])
            .expect("the unconditioned posterior always has mass")
    }

    fn posterior(&self, state: &[u32]) -> Result<PredictorOutput> {
        let k = self.codebook_size;
        let sentinel = k as u32;
        let mut probs = vec![0.0; self.len * k];
        let mut mass = 0.0;
        for (seq, w) in &self.support {
            let consistent = seq
                .iter()
                .zip(state)
                .all(|(&s, &v)| v == sentinel || v == s);
            if !consistent {
                continue;
            }
            mass += w;
            for (pos, &s) in seq.iter().enumerate() {
                probs[pos * k + s as usize] += w;
            }
        }
        if mass <= 0.0 {
            return Err(Error::InvalidDistribution(
                "observed tokens have zero posterior mass".into(),
            ));
        }
        probs.iter_mut().for_each(|p| *p /= mass);
        PredictorOutput::new(self.len, k, probs)
    }
}

impl Predictor for ExactBayes {
    fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    fn predict(&self, state: &[u32], _cond: &Condition<'_>) -> Result<PredictorOutput> {
        if state.len() != self.len {
            return Err(Error::shape(format!(
                "state of length {} for a length-{} joint",
                state.len(),
                self.len
            )));
        }
        if let Some(&bad) = state.iter().find(|&&v| v as usize > self.codebook_size) {
            return Err(Error::TokenOutOfRange {
                index: bad,
                codebook_size: self.codebook_size,
            });
        }
        self.posterior(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureFrames;

    fn predict(p: &ExactBayes, state: &[u32]) -> Result<PredictorOutput> {
        let y = FeatureFrames::zeros(state.len(), 1);
        p.predict(state, &Condition::semantic(&y))
    }

    #[test]
    fn parity_joint() {
        let p = ExactBayes::new(2, 2, vec![(vec![0, 0], 0.5), (vec![1, 1], 0.5)]).unwrap();
        let out = predict(&p, &[0, 2]).unwrap();
        assert_eq!(out.row(1), &[1.0, 0.0]);
        let m = predict(&p, &[2, 2]).unwrap();
        assert_eq!(m.row(0), &[0.5, 0.5]);
        assert!(predict(&p, &[0, 1]).is_err());
    }

    #[test]
    fn dense_matches_sparse_and_chains() {
        // p(z) ∝ 1 + z0 + 2 z1 + 3 z2 over K=3, L=3
        let mut table = Vec::new();
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    table.push(1.0 + a as f64 + 2.0 * b as f64 + 3.0 * c as f64);
                }
            }
        }
        let p = ExactBayes::from_dense(3, 3, &table).unwrap();
        let total: f64 = table.iter().sum();
        // marginal of position 2 by direct summation
        for c in 0..3 {
            let direct: f64 = (0..9).map(|ab| table[ab * 3 + c]).sum::<f64>() / total;
            assert!((p.marginals().row(2)[c] - direct).abs() < 1e-12);
        }
        // chaining: observe position 0 = 1, then position 1 = 2
        let out = predict(&p, &[1, 2, 3]).unwrap();
        let w: Vec<f64> = (0..3).map(|c| table[9 + 2 * 3 + c]).collect();
        let s: f64 = w.iter().sum();
        for c in 0..3 {
            assert!((out.row(2)[c] - w[c] / s).abs() < 1e-12);
        }
        out.validate().unwrap();
    }

    #[test]
    fn bad_tables() {
        assert!(ExactBayes::from_dense(2, 2, &[1.0; 3]).is_err());
        assert!(ExactBayes::from_dense(2, 2, &[0.0; 4]).is_err());
        assert!(ExactBayes::new(2, 2, vec![(vec![0, 2], 1.0)]).is_err());
    }
}
