use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{dot, FeatureFrames};

/// Orthonormal down-projection into the quantizer bottleneck. The
/// up-projection is the transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckProjection {
    dim: usize,
    input_dim: usize,
    // dim × input_dim, row-major, orthonormal rows
    down: Vec<f64>,
}

impl BottleneckProjection {
    pub fn from_rows(dim: usize, input_dim: usize, down: Vec<f64>) -> Result<Self> {
        if dim == 0 || dim > input_dim {
            return Err(Error::shape(format!(
                "bottleneck dim {dim} must be in 1..={input_dim}"
            )));
        }
        if down.len() != dim * input_dim {
            return Err(Error::shape(format!(
                "{} values for a {dim}x{input_dim} projection",
                down.len()
            )));
        }
        Ok(Self {
            dim,
            input_dim,
            down,
        })
    }

    /// Random orthonormal rows by Gram-Schmidt on Gaussian vectors.
    pub fn random(dim: usize, input_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
        while rows.len() < dim {
            let mut v: Vec<f64> = (0..input_dim).map(|_| rng.sample(StandardNormal)).collect();
            // two passes keep the rows orthogonal to machine precision
            for _ in 0..2 {
                for r in &rows {
                    let c = dot(&v, r);
                    v.iter_mut().zip(r).for_each(|(a, b)| *a -= c * b);
                }
            }
            let n = dot(&v, &v).sqrt();
            if n > 1e-8 {
                v.iter_mut().for_each(|a| *a /= n);
                rows.push(v);
            }
        }
        Self::from_rows(dim, input_dim, rows.concat())
    }

    /// Top-`dim` principal directions of the uncentered second moment of
    /// `data`, i.e. the subspace holding the most energy. Eigenvector signs are
    /// fixed so the largest-magnitude component is positive.
    pub fn fit_pca(data: &FeatureFrames, dim: usize) -> Result<Self> {
        let d_in = data.dim();
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        if dim == 0 || dim > d_in {
            return Err(Error::shape(format!("bottleneck dim {dim} must be in 1..={d_in}")));
        }
        let rows: Vec<&[f64]> = data.rows().collect();
        let partials: Vec<Vec<f64>> = rows
            .par_chunks(512)
            .map(|chunk| {
                let mut m = vec![0.0; d_in * d_in];
                for r in chunk {
                    for i in 0..d_in {
                        let ri = r[i];
                        if ri == 0.0 {
                            continue;
                        }
                        let row = &mut m[i * d_in..(i + 1) * d_in];
                        for (slot, &rj) in row[i..].iter_mut().zip(&r[i..]) {
                            *slot += ri * rj;
                        }
                    }
                }
                m
            })
            .collect();
        let mut moment = DMatrix::<f64>::zeros(d_in, d_in);
        for p in &partials {
            for i in 0..d_in {
                for j in i..d_in {
                    moment[(i, j)] += p[i * d_in + j];
                }
            }
        }
        let n = data.frames() as f64;
        for i in 0..d_in {
            for j in i..d_in {
                let v = moment[(i, j)] / n;
                moment[(i, j)] = v;
                moment[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(moment);
        let mut order: Vec<usize> = (0..d_in).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut down = Vec::with_capacity(dim * d_in);
        for &idx in order.iter().take(dim) {
            let col = eig.eigenvectors.column(idx);
            let mut v: Vec<f64> = col.iter().copied().collect();
            let pivot = v
                .iter()
                .copied()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            down.extend(v);
        }
        Self::from_rows(dim, d_in, down)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn down_rows(&self) -> &[f64] {
        &self.down
    }

    pub fn down_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.down.chunks_exact(self.input_dim)) {
            *o = dot(row, x);
        }
    }

    pub fn down(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.down_into(x, &mut out);
        out
    }

    /// Adds `scale * up(c)` to `acc`.
    pub fn up_add(&self, c: &[f64], scale: f64, acc: &mut [f64]) {
        for (&ci, row) in c.iter().zip(self.down.chunks_exact(self.input_dim)) {
            let w = scale * ci;
            if w == 0.0 {
                continue;
            }
            acc.iter_mut().zip(row).for_each(|(a, r)| *a += w * r);
        }
    }

    pub fn up(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.input_dim];
        self.up_add(c, 1.0, &mut out);
        out
    }

    pub fn project_frames(&self, data: &FeatureFrames) -> Result<FeatureFrames> {
        if data.dim() != self.input_dim {
            return Err(Error::shape(format!(
                "features have dim {}, projection expects {}",
                data.dim(),
                self.input_dim
            )));
        }
        let mut out = FeatureFrames::zeros(data.frames(), self.dim);
        for (i, r) in data.rows().enumerate() {
            self.down_into(r, out.row_mut(i));
        }
        Ok(out)
    }

    /// Largest deviation of `down · downᵀ` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let rows: Vec<&[f64]> = self.down.chunks_exact(self.input_dim).collect();
        let mut worst = 0.0f64;
        for (i, a) in rows.iter().enumerate() {
            for (j, b) in rows.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(a, b) - target).abs());
            }
        }
        worst
    }

    /// Rounds every coefficient to the nearest f32, the precision it is
    /// persisted with.
    pub fn round_to_f32(&mut self) {
        self.down.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn random_projection_is_orthonormal() {
        let mut rng = rng_from_seed(1);
        let p = BottleneckProjection::random(8, 200, &mut rng).unwrap();
        assert!(p.orthonormality_error() < 1e-12);
        let mut q = p.clone();
        q.round_to_f32();
        assert!(q.orthonormality_error() < 1e-6);
    }

    #[test]
    fn pca_recovers_a_planted_subspace() {
        let mut rng = rng_from_seed(2);
        let basis = BottleneckProjection::random(3, 20, &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| {
                let c: Vec<f64> = (0..3).map(|k| rng.sample::<f64, _>(StandardNormal) * (3 - k) as f64).collect();
                basis.up(&c)
            })
            .collect();
        let data = FeatureFrames::from_rows(&rows).unwrap();
        let p = BottleneckProjection::fit_pca(&data, 3).unwrap();
        assert!(p.orthonormality_error() < 1e-10);
        // every data row lies in the fitted span
        for r in data.rows() {
            let back = p.up(&p.down(r));
            let err: f64 = back.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(err < 1e-16 * (1.0 + dot(r, r)) + 1e-18);
        }
        assert!(BottleneckProjection::fit_pca(&data, 21).is_err());
    }

    #[test]
    fn up_is_the_transpose() {
        let mut rng = rng_from_seed(3);
        let p = BottleneckProjection::random(4, 10, &mut rng).unwrap();
        let c = vec![0.5, -1.0, 2.0, 0.25];
        assert!((0..4).all(|i| (p.down(&p.up(&c))[i] - c[i]).abs() < 1e-12));
    }
}
