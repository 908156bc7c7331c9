use crate::error::{Error, Result};
use crate::features::FeatureFrames;

/// One token layer during diffusion. Masked positions hold the sentinel `K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMaskState {
    values: Vec<u32>,
    mask: Vec<bool>,
    codebook_size: usize,
}

impl LayerMaskState {
    pub fn fully_masked(len: usize, codebook_size: usize) -> Self {
        Self {
            values: vec![codebook_size as u32; len],
            mask: vec![true; len],
            codebook_size,
        }
    }

    /// Builds a state from clean tokens and a mask.
    pub fn from_tokens(tokens: &[u32], mask: Vec<bool>, codebook_size: usize) -> Result<Self> {
        if tokens.len() != mask.len() {
            return Err(Error::shape("token and mask lengths differ"));
        }
        check_tokens(tokens, codebook_size)?;
        let sentinel = codebook_size as u32;
        let values = tokens
            .iter()
            .zip(&mask)
            .map(|(&t, &m)| if m { sentinel } else { t })
            .collect();
        Ok(Self {
            values,
            mask,
            codebook_size,
        })
    }

    /// Builds a state from values where `K` marks a masked position.
    pub fn from_values(values: Vec<u32>, codebook_size: usize) -> Result<Self> {
        let sentinel = codebook_size as u32;
        if let Some(&bad) = values.iter().find(|&&v| v > sentinel) {
            return Err(Error::TokenOutOfRange {
                index: bad,
                codebook_size,
            });
        }
        let mask = values.iter().map(|&v| v == sentinel).collect();
        Ok(Self {
            values,
            mask,
            codebook_size,
        })
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn sentinel(&self) -> u32 {
        self.codebook_size as u32
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_resolved(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    pub(crate) fn set(&mut self, pos: usize, token: u32) {
        self.values[pos] = token;
        self.mask[pos] = false;
    }

    pub(crate) fn remask(&mut self, pos: usize) {
        self.values[pos] = self.codebook_size as u32;
        self.mask[pos] = true;
    }

    /// The token layer, failing if any position is still masked.
    pub fn into_tokens(self) -> Result<Vec<u32>> {
        if !self.is_resolved() {
            return Err(Error::invalid(format!(
                "{} positions still masked",
                self.masked_count()
            )));
        }
        Ok(self.values)
    }
}

pub(crate) fn check_tokens(tokens: &[u32], codebook_size: usize) -> Result<()> {
    match tokens.iter().find(|&&t| t as usize >= codebook_size) {
        Some(&bad) => Err(Error::TokenOutOfRange {
            index: bad,
            codebook_size,
        }),
        None => Ok(()),
    }
}

/// Conditioning for one layer's predictor. Layer 0 is the semantic layer and
/// sees only `y_en`. Acoustic layer `j ≥ 1` sees `y_en`, the semantic tokens,
/// the acoustic layers below it, and the layers above it filled with MASK.
#[derive(Debug, Clone)]
pub struct Condition<'a> {
    pub y_en: &'a FeatureFrames,
    pub semantic: Option<&'a [u32]>,
    /// Acoustic layers `1..j`, fully unmasked.
    pub lower: Vec<&'a [u32]>,
    /// Acoustic layers `j+1..=N_a`, every value the sentinel.
    pub upper: Vec<Vec<u32>>,
    pub layer: usize,
}

impl<'a> Condition<'a> {
    pub fn semantic(y_en: &'a FeatureFrames) -> Self {
        Self {
            y_en,
            semantic: None,
            lower: Vec::new(),
            upper: Vec::new(),
            layer: 0,
        }
    }

    /// Condition for acoustic layer `layer` (1-based) of `n_acoustic`.
    pub fn acoustic(
        y_en: &'a FeatureFrames,
        semantic: &'a [u32],
        lower: Vec<&'a [u32]>,
        layer: usize,
        n_acoustic: usize,
        codebook_size: usize,
    ) -> Result<Self> {
        if layer == 0 || layer > n_acoustic {
            return Err(Error::invalid(format!(
                "acoustic layer {layer} outside 1..={n_acoustic}"
            )));
        }
        if lower.len() != layer - 1 {
            return Err(Error::shape(format!(
                "acoustic layer {layer} needs {} lower layers, got {}",
                layer - 1,
                lower.len()
            )));
        }
        let len = semantic.len();
        let upper = vec![vec![codebook_size as u32; len]; n_acoustic - layer];
        let cond = Self {
            y_en,
            semantic: Some(semantic),
            lower,
            upper,
            layer,
        };
        cond.validate(len, codebook_size)?;
        Ok(cond)
    }

    /// Total acoustic layer count implied by this condition, or 0 for the
    /// semantic condition.
    pub fn n_acoustic(&self) -> usize {
        if self.layer == 0 {
            0
        } else {
            self.lower.len() + 1 + self.upper.len()
        }
    }

    pub fn validate(&self, len: usize, codebook_size: usize) -> Result<()> {
        if self.y_en.frames() != len {
            return Err(Error::shape(format!(
                "y_en has {} frames, layer has {len}",
                self.y_en.frames()
            )));
        }
        if self.layer == 0 {
            if self.semantic.is_some() || !self.lower.is_empty() || !self.upper.is_empty() {
                return Err(Error::invalid("the semantic condition holds only y_en"));
            }
            return Ok(());
        }
        let semantic = self
            .semantic
            .ok_or_else(|| Error::invalid("acoustic conditions need semantic tokens"))?;
        if self.lower.len() + 1 != self.layer {
            return Err(Error::shape("lower layer count does not match the layer index"));
        }
        for l in std::iter::once(semantic).chain(self.lower.iter().copied()) {
            if l.len() != len {
                return Err(Error::shape("conditioning layer length differs from y_en"));
            }
            check_tokens(l, codebook_size)?;
        }
        let sentinel = codebook_size as u32;
        for u in &self.upper {
            if u.len() != len || u.iter().any(|&v| v != sentinel) {
                return Err(Error::invalid("upper layers must be all MASK"));
            }
        }
        Ok(())
    }

    /// Token at `pos` in context slot `slot`, where slot 0 is the semantic
    /// layer and slot `i ≥ 1` acoustic layer `i`. Slot `self.layer` reads
    /// from `state`.
    pub fn slot_token(&self, slot: usize, pos: usize, state: &[u32]) -> u32 {
        if slot == self.layer {
            state[pos]
        } else if slot == 0 {
            self.semantic.map_or(state[pos], |s| s[pos])
        } else if slot < self.layer {
            self.lower[slot - 1][pos]
        } else {
            self.upper[slot - self.layer - 1][pos]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_state_consistency() {
        let s = LayerMaskState::from_tokens(&[1, 2, 3], vec![false, true, false], 4).unwrap();
        assert_eq!(s.values(), &[1, 4, 3]);
        assert_eq!(s.masked_count(), 1);
        assert!(LayerMaskState::from_tokens(&[1, 4], vec![false; 2], 4).is_err());
        let v = LayerMaskState::from_values(vec![4, 0], 4).unwrap();
        assert_eq!(v.mask(), &[true, false]);
        assert!(v.into_tokens().is_err());
    }

    #[test]
    fn acoustic_condition_slots() {
        let y = FeatureFrames::zeros(2, 3);
        let sem = [5u32, 6];
        let a1 = [7u32, 8];
        let c = Condition::acoustic(&y, &sem, vec![&a1], 2, 4, 16).unwrap();
        assert_eq!(c.upper.len(), 2);
        let state = [16u32, 9];
        let slots: Vec<u32> = (0..5).map(|s| c.slot_token(s, 1, &state)).collect();
        assert_eq!(slots, vec![6, 8, 9, 16, 16]);
        assert!(Condition::acoustic(&y, &sem, vec![], 2, 4, 16).is_err());
        assert!(Condition::acoustic(&y, &sem, vec![], 0, 4, 16).is_err());
        let sc = Condition::semantic(&y);
        assert_eq!(sc.slot_token(0, 0, &state), 16);
        sc.validate(2, 16).unwrap();
        assert!(sc.validate(3, 16).is_err());
    }
}
