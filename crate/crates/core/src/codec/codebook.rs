//! Codebooks with a frozen all-zero entry 0, k-means++/Lloyd initialization
//! and exponential-moving-average centroid updates.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{dist_sq, FeatureFrames};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    size: usize,
    dim: usize,
    entries: Vec<f64>,
    /// EMA cluster mass per entry.
    usage: Vec<f64>,
}

impl Codebook {
    pub fn new(size: usize, dim: usize, entries: Vec<f64>, usage: Vec<f64>) -> Result<Self> {
        if size < 2 || dim == 0 {
            return Err(Error::shape(format!(
                "codebook needs at least 2 entries of dim >= 1, got {size}x{dim}"
            )));
        }
        if entries.len() != size * dim || usage.len() != size {
            return Err(Error::shape("codebook entry/usage lengths do not match its shape"));
        }
        if entries.iter().chain(&usage).any(|v| !v.is_finite()) {
            return Err(Error::invalid("codebook contains non-finite values"));
        }
        if entries[..dim].iter().any(|&v| v != 0.0) {
            return Err(Error::invalid("codebook entry 0 must be the zero vector"));
        }
        Ok(Self {
            size,
            dim,
            entries,
            usage,
        })
    }

    pub fn from_entries(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let size = rows.len();
        Self::new(size, dim, rows.concat(), vec![1.0; size])
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, k: usize) -> &[f64] {
        &self.entries[k * self.dim..(k + 1) * self.dim]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn usage(&self) -> &[f64] {
        &self.usage
    }

    /// Nearest entry and its squared distance. Ties go to the lowest index.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, e) in self.entries.chunks_exact(self.dim).enumerate() {
            let d = dist_sq(x, e);
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    pub fn assign(&self, data: &FeatureFrames) -> Result<Vec<(usize, f64)>> {
        self.check_dim(data)?;
        Ok(data
            .as_slice()
            .par_chunks(self.dim)
            .map(|r| self.nearest(r))
            .collect())
    }

    fn check_dim(&self, data: &FeatureFrames) -> Result<()> {
        if data.dim() != self.dim {
            return Err(Error::shape(format!(
                "data dim {} does not match codebook dim {}",
                data.dim(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn round_to_f32(&mut self) {
        self.entries.iter_mut().for_each(|v| *v = *v as f32 as f64);
        self.usage.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }

    /// Exponential-moving-average update from one batch and its assignments.
    /// Entry `k` tracks `mass_k ← γ·mass_k + (1−γ)·n_k` and
    /// `sum_k ← γ·mass_k·e_k + (1−γ)·Σx`, then `e_k = sum_k / mass_k`.
    /// Entry 0 never moves.
    pub fn ema_update(
        &mut self,
        batch: &FeatureFrames,
        assignments: &[usize],
        decay: f64,
    ) -> Result<()> {
        let (counts, sums) = self.batch_stats(batch, assignments)?;
        self.apply_ema(&counts, &sums, decay)
    }

    /// EMA update where each entry's batch centroid is pulled toward the mean
    /// of the frames carrying its majority label, with weight `pull`.
    pub fn ema_update_supervised(
        &mut self,
        batch: &FeatureFrames,
        assignments: &[usize],
        labels: &[u32],
        n_classes: usize,
        decay: f64,
        pull: f64,
    ) -> Result<()> {
        if labels.len() != batch.frames() {
            return Err(Error::shape("label count does not match batch frames"));
        }
        if !(0.0..=1.0).contains(&pull) {
            return Err(Error::invalid("pull weight must be in [0, 1]"));
        }
        let (counts, mut sums) = self.batch_stats(batch, assignments)?;
        let d = self.dim;
        let mut class_sum = vec![0.0; n_classes * d];
        let mut class_n = vec![0usize; n_classes];
        let mut votes = vec![0usize; self.size * n_classes];
        for ((r, &l), &k) in batch.rows().zip(labels).zip(assignments) {
            let l = l as usize;
            if l >= n_classes {
                return Err(Error::invalid(format!("label {l} out of range")));
            }
            class_n[l] += 1;
            class_sum[l * d..(l + 1) * d]
                .iter_mut()
                .zip(r)
                .for_each(|(s, v)| *s += v);
            votes[k * n_classes + l] += 1;
        }
        for k in 1..self.size {
            if counts[k] == 0.0 {
                continue;
            }
            let row = &votes[k * n_classes..(k + 1) * n_classes];
            let majority = (0..n_classes)
                .max_by(|&a, &b| row[a].cmp(&row[b]).then(b.cmp(&a)))
                .unwrap_or(0);
            let n_l = class_n[majority] as f64;
            let s = &mut sums[k * d..(k + 1) * d];
            for (j, v) in s.iter_mut().enumerate() {
                let centroid = *v / counts[k];
                let class_mean = class_sum[majority * d + j] / n_l;
                *v = counts[k] * ((1.0 - pull) * centroid + pull * class_mean);
            }
        }
        self.apply_ema(&counts, &sums, decay)
    }

    fn batch_stats(
        &self,
        batch: &FeatureFrames,
        assignments: &[usize],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_dim(batch)?;
        if assignments.len() != batch.frames() {
            return Err(Error::shape("assignment count does not match batch frames"));
        }
        let d = self.dim;
        let mut counts = vec![0.0; self.size];
        let mut sums = vec![0.0; self.size * d];
        for (r, &k) in batch.rows().zip(assignments) {
            if k >= self.size {
                return Err(Error::invalid(format!("assignment {k} out of range")));
            }
            counts[k] += 1.0;
            sums[k * d..(k + 1) * d]
                .iter_mut()
                .zip(r)
                .for_each(|(s, v)| *s += v);
        }
        Ok((counts, sums))
    }

    fn apply_ema(&mut self, counts: &[f64], sums: &[f64], decay: f64) -> Result<()> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::invalid(format!("ema decay {decay} must be in (0, 1)")));
        }
        let d = self.dim;
        for k in 1..self.size {
            let mass = decay * self.usage[k] + (1.0 - decay) * counts[k];
            if counts[k] == 0.0 || mass <= 0.0 {
                self.usage[k] = decay * self.usage[k];
                continue;
            }
            let old_mass = self.usage[k];
            for j in 0..d {
                let e = &mut self.entries[k * d + j];
                *e = (decay * old_mass * *e + (1.0 - decay) * sums[k * d + j]) / mass;
            }
            self.usage[k] = mass;
        }
        Ok(())
    }
}

/// Result of [`kmeans_init`]: the codebook plus the distortion after each
/// assignment pass.
#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub codebook: Codebook,
    pub distortion: Vec<f64>,
}

/// Lloyd's algorithm on `size - 1` free centroids next to the frozen zero
/// entry, seeded by k-means++. Centroids that lose all their points are
/// reseeded to the point farthest from its current entry.
pub fn kmeans_init(data: &FeatureFrames, size: usize, iters: usize, seed: u64) -> Result<KMeansResult> {
    if size < 2 {
        return Err(Error::invalid("codebook size must be at least 2"));
    }
    let free = size - 1;
    if data.frames() < free {
        return Err(Error::invalid(format!(
            "{} points cannot seed {free} centroids",
            data.frames()
        )));
    }
    let d = data.dim();
    let n = data.frames();
    let mut rng = rng_from_seed(seed);

    // k-means++: D² sampling relative to the entries chosen so far, starting
    // from the zero entry.
    let mut entries = vec![0.0; size * d];
    let mut nearest: Vec<f64> = data.rows().map(|r| r.iter().map(|v| v * v).sum()).collect();
    for k in 1..size {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        entries[k * d..(k + 1) * d].copy_from_slice(data.row(pick));
        let c = &entries[k * d..(k + 1) * d];
        nearest
            .par_iter_mut()
            .zip(data.as_slice().par_chunks(d))
            .for_each(|(m, r)| *m = m.min(dist_sq(r, c)));
    }
    let mut codebook = Codebook::new(size, d, entries, vec![0.0; size])?;

    let mut distortion = Vec::with_capacity(iters + 1);
    let mut assign = codebook.assign(data)?;
    distortion.push(assign.iter().map(|a| a.1).sum::<f64>() / n as f64);
    for _ in 0..iters {
        let mut sums = vec![0.0; size * d];
        let mut counts = vec![0usize; size];
        for (r, &(k, _)) in data.rows().zip(&assign) {
            counts[k] += 1;
            sums[k * d..(k + 1) * d]
                .iter_mut()
                .zip(r)
                .for_each(|(s, v)| *s += v);
        }
        let mut taken = vec![false; n];
        for k in 1..size {
            if counts[k] > 0 {
                let inv = 1.0 / counts[k] as f64;
                for j in 0..d {
                    codebook.entries[k * d + j] = sums[k * d + j] * inv;
                }
            } else {
                // dead centroid: move it onto the worst-served point
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| {
                        assign[a]
                            .1
                            .partial_cmp(&assign[b].1)
                            .unwrap_or(std::cmp::Ordering::Equal)
                            .then(b.cmp(&a))
                    });
                if let Some(i) = far {
                    taken[i] = true;
                    codebook.entries[k * d..(k + 1) * d].copy_from_slice(data.row(i));
                    assign[i].1 = 0.0;
                }
            }
        }
        let next = codebook.assign(data)?;
        let dist = next.iter().map(|a| a.1).sum::<f64>() / n as f64;
        let converged = next.iter().zip(&assign).all(|(a, b)| a.0 == b.0);
        assign = next;
        distortion.push(dist);
        if converged {
            break;
        }
    }
    let mut usage = vec![0.0; size];
    for &(k, _) in &assign {
        usage[k] += 1.0;
    }
    codebook.usage = usage;
    Ok(KMeansResult {
        codebook,
        distortion,
    })
}
