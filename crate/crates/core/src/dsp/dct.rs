//! Non-overlapping orthonormal DCT-II framing, the deterministic stand-in for
//! the codec encoder (analysis) and decoder (synthesis).

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::features::FeatureFrames;

/// Cached orthonormal DCT-II basis for one frame length.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTransform {
    frame_len: usize,
    // basis[k * n + i] = s_k cos(pi (i + 1/2) k / n)
    basis: Vec<f64>,
}

impl FrameTransform {
    pub fn new(frame_len: usize) -> Result<Self> {
        if frame_len == 0 {
            return Err(Error::invalid("frame length must be at least 1"));
        }
        let n = frame_len;
        let nf = n as f64;
        let mut basis = vec![0.0; n * n];
        for k in 0..n {
            let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            for i in 0..n {
                basis[k * n + i] =
                    scale * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / nf).cos();
            }
        }
        Ok(Self { frame_len, basis })
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    /// Number of frames produced for `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        len.div_ceil(self.frame_len)
    }

    pub fn forward(&self, audio: &AudioBuffer) -> Result<FeatureFrames> {
        if audio.is_empty() {
            return Err(Error::EmptyInput);
        }
        let n = self.frame_len;
        let frames = self.frame_count(audio.len());
        let mut out = FeatureFrames::zeros(frames, n);
        let mut buf = vec![0.0f64; n];
        for f in 0..frames {
            buf.iter_mut().for_each(|b| *b = 0.0);
            let start = f * n;
            let end = (start + n).min(audio.len());
            for (b, &s) in buf.iter_mut().zip(&audio.samples()[start..end]) {
                *b = s as f64;
            }
            let row = out.row_mut(f);
            for (k, r) in row.iter_mut().enumerate() {
                *r = crate::features::dot(&self.basis[k * n..(k + 1) * n], &buf);
            }
        }
        Ok(out)
    }

    pub fn inverse(
        &self,
        frames: &FeatureFrames,
        out_len: usize,
        sample_rate: u32,
    ) -> Result<AudioBuffer> {
        let n = self.frame_len;
        if frames.is_empty() {
            return Err(Error::EmptyInput);
        }
        if frames.dim() != n {
            return Err(Error::shape(format!(
                "feature dim {} does not match frame length {n}",
                frames.dim()
            )));
        }
        if out_len > frames.frames() * n {
            return Err(Error::invalid(format!(
                "output length {out_len} exceeds {} frames of {n} samples",
                frames.frames()
            )));
        }
        let mut samples = vec![0.0f32; frames.frames() * n];
        let mut acc = vec![0.0f64; n];
        for (f, row) in frames.rows().enumerate() {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (k, &c) in row.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                for (a, b) in acc.iter_mut().zip(&self.basis[k * n..(k + 1) * n]) {
                    *a += c * b;
                }
            }
            for (s, a) in samples[f * n..(f + 1) * n].iter_mut().zip(&acc) {
                *s = *a as f32;
            }
        }
        samples.truncate(out_len);
        AudioBuffer::new(samples, sample_rate)
    }
}

/// Frames `audio` into non-overlapping `frame_len` blocks (zero-padded tail)
/// and applies an orthonormal DCT-II to each.
pub fn frame_transform(audio: &AudioBuffer, frame_len: usize) -> Result<FeatureFrames> {
    FrameTransform::new(frame_len)?.forward(audio)
}

pub fn inverse_frame_transform(
    frames: &FeatureFrames,
    frame_len: usize,
    out_len: usize,
    sample_rate: u32,
) -> Result<AudioBuffer> {
    FrameTransform::new(frame_len)?.inverse(frames, out_len, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn downsample_rate_of_200() {
        let audio = AudioBuffer::new(vec![0.1; 2000], 16000).unwrap();
        let f = frame_transform(&audio, 200).unwrap();
        assert_eq!((f.frames(), f.dim()), (10, 200));
    }

    #[test]
    fn constant_frame_has_dc_only() {
        let c = 0.3f32;
        let audio = AudioBuffer::new(vec![c; 64], 8000).unwrap();
        let f = frame_transform(&audio, 16).unwrap();
        for row in f.rows() {
            assert!((row[0] - c as f64 * 4.0).abs() < 1e-6);
            assert!(row[1..].iter().all(|v| v.abs() < 1e-6));
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        let audio = AudioBuffer::new(vec![], 16000).unwrap();
        assert!(matches!(frame_transform(&audio, 200), Err(Error::EmptyInput)));
        assert!(frame_transform(&AudioBuffer::new(vec![1.0], 16000).unwrap(), 0).is_err());
    }

    #[test]
    fn random_round_trips_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = FrameTransform::new(200).unwrap();
        for _ in 0..100 {
            let len: usize = rng.random_range(1..1500);
            let x: Vec<f32> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let audio = AudioBuffer::new(x.clone(), 16000).unwrap();
            let f = t.forward(&audio).unwrap();
            assert_eq!(f.frames(), len.div_ceil(200));
            let e_time: f64 = x.iter().map(|&v| (v as f64).powi(2)).sum();
            let e_freq: f64 = f.as_slice().iter().map(|v| v * v).sum();
            assert!((e_time - e_freq).abs() <= 1e-9 * e_time.max(1.0));
            let back = t.inverse(&f, len, 16000).unwrap();
            for (a, b) in back.samples().iter().zip(&x) {
                assert!((a - b).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn zero_features_give_silence() {
        let z = FeatureFrames::zeros(3, 8);
        let a = inverse_frame_transform(&z, 8, 20, 8000).unwrap();
        assert_eq!(a.len(), 20);
        assert!(a.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn basis_vector_is_a_cosine() {
        let n = 16;
        let k = 3;
        let mut f = FeatureFrames::zeros(1, n);
        f.row_mut(0)[k] = 1.0;
        let a = inverse_frame_transform(&f, n, n, 8000).unwrap();
        for (i, &s) in a.samples().iter().enumerate() {
            let expect = (2.0 / n as f64).sqrt()
                * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos();
            assert!((s as f64 - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn inverse_rejects_long_output() {
        let z = FeatureFrames::zeros(2, 8);
        assert!(inverse_frame_transform(&z, 8, 17, 8000).is_err());
        assert!(inverse_frame_transform(&z, 4, 8, 8000).is_err());
    }
}
