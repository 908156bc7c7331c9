use rayon::prelude::*;

use super::codebook::Codebook;
use super::projection::BottleneckProjection;
use crate::error::{Error, Result};
use crate::features::FeatureFrames;

/// Token grid of one utterance. Layer 0 holds the semantic tokens, layers
/// `1..` the acoustic tokens in residual order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorizedTokens {
    layers: Vec<Vec<u32>>,
    codebook_size: usize,
}

impl FactorizedTokens {
    pub fn new(layers: Vec<Vec<u32>>, codebook_size: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("token grid needs at least one layer"));
        }
        let len = layers[0].len();
        if layers.iter().any(|l| l.len() != len) {
            return Err(Error::shape("token layers have different lengths"));
        }
        if let Some(&bad) = layers.iter().flatten().find(|&&t| t as usize >= codebook_size) {
            return Err(Error::TokenOutOfRange {
                index: bad,
                codebook_size,
            });
        }
        Ok(Self {
            layers,
            codebook_size,
        })
    }

    pub fn zeros(n_layers: usize, len: usize, codebook_size: usize) -> Self {
        Self {
            layers: vec![vec![0; len]; n_layers],
            codebook_size,
        }
    }

    pub fn semantic(&self) -> &[u32] {
        &self.layers[0]
    }

    /// Acoustic layer `j`, zero-based.
    pub fn acoustic(&self, j: usize) -> &[u32] {
        &self.layers[j + 1]
    }

    pub fn layer(&self, i: usize) -> &[u32] {
        &self.layers[i]
    }

    pub fn layers(&self) -> &[Vec<u32>] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<Vec<u32>> {
        self.layers
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_acoustic(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn len(&self) -> usize {
        self.layers[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }
}

/// Output of [`quantize`].
#[derive(Debug, Clone)]
pub struct Quantized {
    pub tokens: FactorizedTokens,
    /// `up·c` of the semantic layer.
    pub semantic_emb: FeatureFrames,
    /// Sum of `up·c` over the acoustic layers.
    pub acoustic_emb: FeatureFrames,
    /// `‖r_i‖` for `i = 1..=n_layers + 1`, one row per frame.
    pub residual_norms: FeatureFrames,
    /// `down·r_i` per layer: the bottleneck vectors each codebook saw.
    pub latents: Vec<FeatureFrames>,
}

impl Quantized {
    /// Mean squared bottleneck error `‖down·r − c‖²` over frames and layers.
    /// Codebook and commitment losses share this value under a fixed encoder.
    pub fn latent_error(&self, codebooks: &[Codebook]) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for (layer, (lat, cb)) in self.latents.iter().zip(codebooks).enumerate() {
            for (r, &t) in lat.rows().zip(self.tokens.layer(layer)) {
                total += crate::features::dist_sq(r, cb.entry(t as usize));
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }
}

/// Projection used at `layer`: either one shared projection or one per layer.
pub fn projection_for(projections: &[BottleneckProjection], layer: usize) -> &BottleneckProjection {
    if projections.len() == 1 {
        &projections[0]
    } else {
        &projections[layer]
    }
}

fn check_codec(
    input_dim: usize,
    codebooks: &[Codebook],
    projections: &[BottleneckProjection],
) -> Result<()> {
    if codebooks.is_empty() {
        return Err(Error::shape("at least one codebook is required"));
    }
    if projections.len() != 1 && projections.len() != codebooks.len() {
        return Err(Error::shape(format!(
            "{} projections for {} codebooks; expected 1 or one per codebook",
            projections.len(),
            codebooks.len()
        )));
    }
    let k = codebooks[0].size();
    for (i, cb) in codebooks.iter().enumerate() {
        let p = projection_for(projections, i);
        if cb.size() != k {
            return Err(Error::shape("all codebooks must have the same size"));
        }
        if cb.dim() != p.dim() {
            return Err(Error::shape(format!(
                "codebook {i} has dim {}, projection has dim {}",
                cb.dim(),
                p.dim()
            )));
        }
        if p.input_dim() != input_dim {
            return Err(Error::shape(format!(
                "features have dim {input_dim}, projection expects {}",
                p.input_dim()
            )));
        }
    }
    Ok(())
}

struct FrameCode {
    tokens: Vec<u32>,
    semantic: Vec<f64>,
    acoustic: Vec<f64>,
    norms: Vec<f64>,
    latents: Vec<Vec<f64>>,
}

fn quantize_frame(
    h: &[f64],
    codebooks: &[Codebook],
    projections: &[BottleneckProjection],
) -> FrameCode {
    let n = codebooks.len();
    let mut r = h.to_vec();
    let mut code = FrameCode {
        tokens: Vec::with_capacity(n),
        semantic: vec![0.0; h.len()],
        acoustic: vec![0.0; h.len()],
        norms: Vec::with_capacity(n + 1),
        latents: Vec::with_capacity(n),
    };
    code.norms.push(crate::features::norm_sq(&r).sqrt());
    for (i, cb) in codebooks.iter().enumerate() {
        let p = projection_for(projections, i);
        let z = p.down(&r);
        let (k, _) = cb.nearest(&z);
        let c = cb.entry(k);
        p.up_add(c, -1.0, &mut r);
        p.up_add(c, 1.0, if i == 0 { &mut code.semantic } else { &mut code.acoustic });
        code.tokens.push(k as u32);
        code.norms.push(crate::features::norm_sq(&r).sqrt());
        code.latents.push(z);
    }
    code
}

/// Residual vector quantization. Per frame, `r_1 = h`; layer `i` picks the
/// entry nearest to `down_i·r_i` (lowest index on ties) and sets
/// `r_{i+1} = r_i − up_i·c`. Codebook 0 is the semantic layer.
pub fn quantize(
    h: &FeatureFrames,
    codebooks: &[Codebook],
    projections: &[BottleneckProjection],
) -> Result<Quantized> {
    check_codec(h.dim(), codebooks, projections)?;
    let n = codebooks.len();
    let frames: Vec<&[f64]> = h.rows().collect();
    let codes: Vec<FrameCode> = frames
        .par_iter()
        .map(|r| quantize_frame(r, codebooks, projections))
        .collect();

    let l = h.frames();
    let dim = h.dim();
    let mut layers = vec![Vec::with_capacity(l); n];
    let mut semantic = Vec::with_capacity(l * dim);
    let mut acoustic = Vec::with_capacity(l * dim);
    let mut norms = Vec::with_capacity(l * (n + 1));
    let mut latents: Vec<Vec<f64>> = codebooks
        .iter()
        .map(|cb| Vec::with_capacity(l * cb.dim()))
        .collect();
    for code in codes {
        for (layer, t) in layers.iter_mut().zip(&code.tokens) {
            layer.push(*t);
        }
        semantic.extend(code.semantic);
        acoustic.extend(code.acoustic);
        norms.extend(code.norms);
        for (dst, z) in latents.iter_mut().zip(code.latents) {
            dst.extend(z);
        }
    }
    Ok(Quantized {
        tokens: FactorizedTokens::new(layers, codebooks[0].size())?,
        semantic_emb: FeatureFrames::new(l, dim, semantic)?,
        acoustic_emb: FeatureFrames::new(l, dim, acoustic)?,
        residual_norms: FeatureFrames::new(l, n + 1, norms)?,
        latents: latents
            .into_iter()
            .zip(codebooks)
            .map(|(z, cb)| FeatureFrames::new(l, cb.dim(), z))
            .collect::<Result<_>>()?,
    })
}

/// Token-sum decoding: `Σ_i up_i·c_i` per frame.
pub fn dequantize(
    tokens: &FactorizedTokens,
    codebooks: &[Codebook],
    projections: &[BottleneckProjection],
) -> Result<FeatureFrames> {
    let input_dim = projections
        .first()
        .ok_or_else(|| Error::shape("at least one projection is required"))?
        .input_dim();
    check_codec(input_dim, codebooks, projections)?;
    if tokens.n_layers() != codebooks.len() {
        return Err(Error::shape(format!(
            "{} token layers for {} codebooks",
            tokens.n_layers(),
            codebooks.len()
        )));
    }
    let k = codebooks[0].size();
    if let Some(&bad) = tokens.layers().iter().flatten().find(|&&t| t as usize >= k) {
        return Err(Error::TokenOutOfRange {
            index: bad,
            codebook_size: k,
        });
    }
    let mut out = FeatureFrames::zeros(tokens.len(), input_dim);
    for f in 0..tokens.len() {
        let acc = out.row_mut(f);
        for (i, cb) in codebooks.iter().enumerate() {
            let t = tokens.layer(i)[f] as usize;
            projection_for(projections, i).up_add(cb.entry(t), 1.0, acc);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::codebook::kmeans_init;
    use crate::features::dist_sq;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_frames(n: usize, dim: usize, seed: u64) -> FeatureFrames {
        let mut rng = rng_from_seed(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        FeatureFrames::from_rows(&rows).unwrap()
    }

    fn toy_codec(seed: u64, shared: bool) -> (Vec<Codebook>, Vec<BottleneckProjection>) {
        let mut rng = rng_from_seed(seed);
        let n_proj = if shared { 1 } else { 6 };
        let projs: Vec<_> = (0..n_proj)
            .map(|_| BottleneckProjection::random(4, 12, &mut rng).unwrap())
            .collect();
        let train = random_frames(300, 12, seed + 100);
        let mut codebooks = Vec::new();
        let mut resid = train.clone();
        for layer in 0..6 {
            let p = projection_for(&projs, layer);
            let z = p.project_frames(&resid).unwrap();
            let cb = kmeans_init(&z, 16, 10, seed + layer as u64).unwrap().codebook;
            let q = quantize(&resid, std::slice::from_ref(&cb), std::slice::from_ref(p)).unwrap();
            let deq = dequantize(&q.tokens, std::slice::from_ref(&cb), std::slice::from_ref(p)).unwrap();
            let next: Vec<f64> = resid.as_slice().iter().zip(deq.as_slice()).map(|(a, b)| a - b).collect();
            resid = FeatureFrames::new(resid.frames(), 12, next).unwrap();
            codebooks.push(cb);
        }
        (codebooks, projs)
    }

    #[test]
    fn zero_frame_gives_zero_tokens() {
        let (cbs, projs) = toy_codec(1, false);
        let q = quantize(&FeatureFrames::zeros(3, 12), &cbs, &projs).unwrap();
        assert!(q.tokens.layers().iter().flatten().all(|&t| t == 0));
        assert!(q.residual_norms.as_slice().iter().all(|&v| v == 0.0));
        let back = dequantize(&q.tokens, &cbs, &projs).unwrap();
        assert!(back.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_entry_is_recovered() {
        let (cbs, projs) = toy_codec(2, true);
        let p = &projs[0];
        let h = p.up(cbs[0].entry(5));
        let frames = FeatureFrames::new(1, 12, h.clone()).unwrap();
        let q = quantize(&frames, &cbs, &projs).unwrap();
        assert_eq!(q.tokens.semantic()[0], 5);
        let drop = q.residual_norms.row(0)[0] - q.residual_norms.row(0)[1];
        let entry_norm = crate::features::norm_sq(cbs[0].entry(5)).sqrt();
        assert!((drop - entry_norm).abs() < 1e-12);
    }

    #[test]
    fn residuals_shrink_and_reconstruction_telescopes() {
        for shared in [true, false] {
            let (cbs, projs) = toy_codec(3, shared);
            let h = random_frames(1000, 12, 4);
            let q = quantize(&h, &cbs, &projs).unwrap();
            for row in q.residual_norms.rows() {
                for w in row.windows(2) {
                    assert!(w[1] <= w[0] * (1.0 + 1e-12), "{row:?}");
                }
            }
            let back = dequantize(&q.tokens, &cbs, &projs).unwrap();
            for (f, (a, b)) in h.rows().zip(back.rows()).enumerate() {
                let err = dist_sq(a, b).sqrt();
                assert!((err - q.residual_norms.row(f)[6]).abs() < 1e-9);
            }
            // embeddings split the reconstruction
            for f in 0..h.frames() {
                for j in 0..12 {
                    let s = q.semantic_emb.row(f)[j] + q.acoustic_emb.row(f)[j];
                    assert!((s - back.row(f)[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn shape_errors() {
        let (cbs, projs) = toy_codec(5, true);
        assert!(quantize(&FeatureFrames::zeros(2, 11), &cbs, &projs).is_err());
        assert!(quantize(&FeatureFrames::zeros(2, 12), &cbs, &projs[..0]).is_err());
        let bad = FactorizedTokens::new(vec![vec![16]; 6], 17).unwrap();
        assert!(matches!(
            dequantize(&bad, &cbs, &projs),
            Err(Error::TokenOutOfRange { index: 16, .. })
        ));
        assert!(FactorizedTokens::new(vec![vec![0, 1], vec![0]], 4).is_err());
    }
}
