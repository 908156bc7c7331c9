use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Predictor, PredictorOutput};
use nalgebra::DMatrix;

use crate::codec::io::{self, Array};
use crate::codec::{kmeans_init, Codebook};
use crate::diffusion::Condition;
use crate::error::{Error, Result};
use crate::features::{dot, FeatureFrames};

const CONTEXT_MAGIC: &[u8; 8] = b"SISECTX\0";

/// Learned noisy-frame encoder for count contexts: a linear map `W`
/// (`out_dim × in_dim`) followed by nearest-entry lookup in a context
/// codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextQuantizer {
    in_dim: usize,
    map: Vec<f64>,
    codebook: Codebook,
}

impl ContextQuantizer {
    /// `map` is row-major with `codebook.dim()` rows.
    pub fn new(in_dim: usize, map: Vec<f64>, codebook: Codebook) -> Result<Self> {
        if in_dim == 0 || map.len() != codebook.dim() * in_dim {
            return Err(Error::shape(format!(
                "context map has {} values for a {} × {in_dim} matrix",
                map.len(),
                codebook.dim()
            )));
        }
        if map.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("context map must be finite"));
        }
        Ok(Self { in_dim, map, codebook })
    }

    /// Fits `W` by ridge regression of `targets` on `inputs`
    /// (`W = Zᵀ Y (YᵀY + ridge·I)⁻¹`), then a k-means codebook of
    /// `n_contexts` entries on the mapped inputs. Values are rounded to f32.
    pub fn fit(
        inputs: &FeatureFrames,
        targets: &FeatureFrames,
        ridge: f64,
        n_contexts: usize,
        kmeans_iters: usize,
        seed: u64,
    ) -> Result<Self> {
        if inputs.frames() != targets.frames() || inputs.is_empty() {
            return Err(Error::shape("context inputs and targets must have the same nonzero frame count"));
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::invalid(format!("ridge {ridge} must be finite and nonnegative")));
        }
        let (d, m) = (inputs.dim(), targets.dim());
        let y = DMatrix::from_row_slice(inputs.frames(), d, inputs.as_slice());
        let z = DMatrix::from_row_slice(targets.frames(), m, targets.as_slice());
        let mut gram = y.transpose() * &y;
        for i in 0..d {
            gram[(i, i)] += ridge;
        }
        let rhs = y.transpose() * z;
        let w = gram
            .cholesky()
            .ok_or_else(|| Error::invalid("context regression is singular; increase the ridge"))?
            .solve(&rhs);
        let map: Vec<f64> = (0..m)
            .flat_map(|j| (0..d).map(move |i| (i, j)))
            .map(|(i, j)| w[(i, j)] as f32 as f64)
            .collect();
        let mut q = Self {
            in_dim: d,
            map,
            codebook: Codebook::from_entries(&[vec![0.0; m], vec![0.0; m]])?,
        };
        let mapped: Vec<f64> = inputs.rows().flat_map(|r| q.encode(r)).collect();
        let mapped = FeatureFrames::new(inputs.frames(), m, mapped)?;
        let mut codebook = kmeans_init(&mapped, n_contexts, kmeans_iters, seed)?.codebook;
        codebook.round_to_f32();
        q.codebook = codebook;
        Ok(q)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn map(&self) -> &[f64] {
        &self.map
    }

    pub fn encode(&self, frame: &[f64]) -> Vec<f64> {
        self.map.chunks_exact(self.in_dim).map(|row| dot(row, frame)).collect()
    }

    pub fn token(&self, frame: &[f64]) -> u32 {
        self.codebook.nearest(&self.encode(frame)).0 as u32
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let (n, m) = (self.codebook.size(), self.codebook.dim());
        io::write_arrays(
            path,
            CONTEXT_MAGIC,
            &[
                Array::new(vec![m, self.in_dim], self.map.clone()),
                Array::new(vec![n, m], self.codebook.entries().to_vec()),
                Array::new(vec![n], self.codebook.usage().to_vec()),
            ],
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match &io::read_arrays(path, CONTEXT_MAGIC)?[..] {
            [w, e, u] if w.dims.len() == 2 && e.dims.len() == 2 && e.dims[1] == w.dims[0] && u.dims == [e.dims[0]] => {
                let cb = Codebook::new(e.dims[0], e.dims[1], e.data.clone(), u.data.clone())
                    .map_err(|err| Error::format(path, err.to_string()))?;
                Self::new(w.dims[1], w.data.clone(), cb)
            }
            _ => Err(Error::format(path, "expected a context map, codebook and usage")),
        }
    }
}

/// Context key: (quantized y_en, token of the layer below or K, layer).
type Key = (u32, u32, u32);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountContext {
    pub y_token: u32,
    pub lower_token: u32,
    pub layer: u32,
    /// Sparse `(token, count)` pairs in token order.
    pub counts: Vec<(u32, u64)>,
}

/// JSON form of the count tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountTables {
    pub codebook_size: usize,
    pub alpha: f64,
    pub contexts: Vec<CountContext>,
}

/// Additively smoothed conditional counts:
/// `p(v | key) = (count(key, v) + α) / (total(key) + α·K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountPredictor {
    codebook_size: usize,
    alpha: f64,
    quantizer: ContextQuantizer,
    tables: Option<BTreeMap<Key, BTreeMap<u32, u64>>>,
}

impl CountPredictor {
    pub fn new(codebook_size: usize, alpha: f64, quantizer: ContextQuantizer) -> Result<Self> {
        if codebook_size < 1 {
            return Err(Error::invalid("codebook size must be positive"));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("smoothing alpha {alpha} must be positive")));
        }
        Ok(Self {
            codebook_size,
            alpha,
            quantizer,
            tables: None,
        })
    }

    pub fn quantizer(&self) -> &ContextQuantizer {
        &self.quantizer
    }

    pub fn is_fitted(&self) -> bool {
        self.tables.is_some()
    }

    fn key(&self, pos: usize, state: &[u32], cond: &Condition<'_>) -> Key {
        let y = self.quantizer.token(cond.y_en.row(pos));
        let lower = if cond.layer == 0 {
            self.codebook_size as u32
        } else {
            cond.slot_token(cond.layer - 1, pos, state)
        };
        (y, lower, cond.layer as u32)
    }

    /// Adds the counts of `(target tokens, condition)` pairs. The state is
    /// irrelevant to the key, so the clean target stands in for it.
    pub fn fit<'a>(&mut self, examples: impl IntoIterator<Item = (&'a [u32], Condition<'a>)>) -> Result<()> {
        let mut tables = self.tables.take().unwrap_or_default();
        for (target, cond) in examples {
            cond.validate(target.len(), self.codebook_size)?;
            crate::diffusion::check_tokens(target, self.codebook_size)?;
            for (pos, &t) in target.iter().enumerate() {
                let key = self.key(pos, target, &cond);
                *tables.entry(key).or_default().entry(t).or_insert(0) += 1;
            }
        }
        self.tables = Some(tables);
        Ok(())
    }

    pub fn tables(&self) -> Result<CountTables> {
        let tables = self.tables.as_ref().ok_or(Error::NotFitted)?;
        Ok(CountTables {
            codebook_size: self.codebook_size,
            alpha: self.alpha,
            contexts: tables
                .iter()
                .map(|(&(y_token, lower_token, layer), counts)| CountContext {
                    y_token,
                    lower_token,
                    layer,
                    counts: counts.iter().map(|(&t, &c)| (t, c)).collect(),
                })
                .collect(),
        })
    }

    pub fn from_tables(tables: CountTables, quantizer: ContextQuantizer) -> Result<Self> {
        let mut p = Self::new(tables.codebook_size, tables.alpha, quantizer)?;
        let mut map = BTreeMap::new();
        for c in tables.contexts {
            let mut counts = BTreeMap::new();
            for (t, n) in c.counts {
                if t as usize >= p.codebook_size {
                    return Err(Error::TokenOutOfRange {
                        index: t,
                        codebook_size: p.codebook_size,
                    });
                }
                counts.insert(t, n);
            }
            map.insert((c.y_token, c.lower_token, c.layer), counts);
        }
        p.tables = Some(map);
        Ok(p)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string(&self.tables()?).map_err(|e| Error::json(path, e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>, quantizer: ContextQuantizer) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tables: CountTables = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::from_tables(tables, quantizer)
    }
}

impl Predictor for CountPredictor {
    fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    fn predict(&self, state: &[u32], cond: &Condition<'_>) -> Result<PredictorOutput> {
        let tables = self.tables.as_ref().ok_or(Error::NotFitted)?;
        cond.validate(state.len(), self.codebook_size)?;
        let k = self.codebook_size;
        let mut probs = Vec::with_capacity(state.len() * k);
        for pos in 0..state.len() {
            let key = self.key(pos, state, cond);
            let start = probs.len();
            match tables.get(&key) {
                Some(counts) => {
                    let total: u64 = counts.values().sum();
                    let denom = total as f64 + self.alpha * k as f64;
                    probs.extend(std::iter::repeat_n(self.alpha / denom, k));
                    for (&t, &c) in counts {
                        probs[start + t as usize] = (c as f64 + self.alpha) / denom;
                    }
                }
                None => probs.extend(std::iter::repeat_n(1.0 / k as f64, k)),
            }
        }
        PredictorOutput::new(state.len(), k, probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quantizer() -> ContextQuantizer {
        // 1-d map reading the first feature; entries at 0, 1, 2, 3
        let cb = Codebook::from_entries(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        ContextQuantizer::new(2, vec![1.0, 0.0], cb).unwrap()
    }

    #[test]
    fn unfitted_and_unseen() {
        let mut p = CountPredictor::new(4, 1.0, quantizer()).unwrap();
        let y = FeatureFrames::from_rows(&[vec![1.0, 0.0], vec![3.0, 5.0]]).unwrap();
        assert!(matches!(p.predict(&[4, 4], &Condition::semantic(&y)), Err(Error::NotFitted)));
        p.fit(std::iter::empty()).unwrap();
        let out = p.predict(&[4, 4], &Condition::semantic(&y)).unwrap();
        assert_eq!(out.row(1), &[0.25; 4]);
    }

    #[test]
    fn deterministic_mapping_is_learned() {
        let y = FeatureFrames::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]]).unwrap();
        let target = [1u32, 2, 3];
        let mut p = CountPredictor::new(4, 1.0, quantizer()).unwrap();
        for _ in 0..5 {
            p.fit([(&target[..], Condition::semantic(&y))]).unwrap();
        }
        let out = p.predict(&[4, 4, 4], &Condition::semantic(&y)).unwrap();
        for (pos, &t) in target.iter().enumerate() {
            let row = out.row(pos);
            assert_eq!(crate::codec::argmax(row), t as usize);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(row[t as usize], 6.0 / 9.0);
        }
    }

    #[test]
    fn acoustic_context_uses_layer_below() {
        let y = FeatureFrames::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let sem = [0u32, 1];
        let a1 = [2u32, 3];
        let mut p = CountPredictor::new(4, 1.0, quantizer()).unwrap();
        let c = Condition::acoustic(&y, &sem, vec![], 1, 2, 4).unwrap();
        p.fit([(&a1[..], c.clone())]).unwrap();
        let out = p.predict(&[4, 4], &c).unwrap();
        assert_eq!(crate::codec::argmax(out.row(0)), 2);
        assert_eq!(crate::codec::argmax(out.row(1)), 3);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("counts.json");
        p.save_json(&path).unwrap();
        let back = CountPredictor::load_json(&path, quantizer()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn fit_recovers_a_linear_map() {
        // targets are an exact linear function of the inputs
        let rows: Vec<Vec<f64>> = (0..64).map(|i| vec![(i % 8) as f64, (i / 8) as f64, 1.0]).collect();
        let y = FeatureFrames::from_rows(&rows).unwrap();
        let z: Vec<Vec<f64>> = rows.iter().map(|r| vec![2.0 * r[0] - r[1], r[2]]).collect();
        let z = FeatureFrames::from_rows(&z).unwrap();
        let q = ContextQuantizer::fit(&y, &z, 0.0, 8, 10, 1).unwrap();
        let want = [2.0, -1.0, 0.0, 0.0, 0.0, 1.0];
        for (a, b) in q.map().iter().zip(want) {
            assert!((a - b).abs() < 1e-5, "{:?}", q.map());
        }
        assert_eq!(q.codebook().size(), 8);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ctx.bin");
        q.save(&path).unwrap();
        assert_eq!(ContextQuantizer::load(&path).unwrap(), q);
    }
}
