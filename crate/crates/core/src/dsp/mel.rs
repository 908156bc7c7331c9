//! Mel filterbanks, log-mel analysis and the multi-scale mel reconstruction
//! loss.

use serde::{Deserialize, Serialize};

use super::stft::{stft, Window};
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Log-mel values are floored at this magnitude before the logarithm.
pub const LOG_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl MelConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::invalid(format!(
                "mel hop {} must be in 1..={}",
                self.hop, self.n_fft
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::invalid("n_mels must be at least 1"));
        }
        let nyquist = sample_rate as f64 / 2.0;
        if !(0.0 <= self.fmin && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(Error::invalid(format!(
                "mel range [{}, {}] must satisfy 0 <= fmin < fmax <= {nyquist}",
                self.fmin, self.fmax
            )));
        }
        Ok(())
    }

    /// Three scales: n_fft 256/512/1024, hop n_fft/4, 20/40/80 bands over
    /// the full band.
    pub fn default_scales(sample_rate: u32) -> Vec<MelConfig> {
        [(256, 20), (512, 40), (1024, 80)]
            .into_iter()
            .map(|(n_fft, n_mels)| MelConfig {
                n_fft,
                hop: n_fft / 4,
                n_mels,
                fmin: 0.0,
                fmax: sample_rate as f64 / 2.0,
            })
            .collect()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filterbank, `n_mels × (n_fft / 2 + 1)` row-major, unit peak.
pub fn mel_filterbank(config: &MelConfig, sample_rate: u32) -> Vec<f64> {
    let bins = config.n_fft / 2 + 1;
    let lo = hz_to_mel(config.fmin);
    let hi = hz_to_mel(config.fmax);
    let edges: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.n_mels + 1) as f64))
        .collect();
    let mut fb = vec![0.0; config.n_mels * bins];
    for m in 0..config.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / config.n_fft as f64;
            let up = (f - left) / (center - left);
            let down = (right - f) / (right - center);
            fb[m * bins + k] = up.min(down).max(0.0);
        }
    }
    fb
}

/// Log-mel magnitudes, `frames × n_mels` row-major.
pub fn log_mel(audio: &AudioBuffer, config: &MelConfig) -> Result<Vec<f64>> {
    config.validate(audio.sample_rate())?;
    let spec = stft(audio, config.n_fft, config.hop, Window::Hann)?;
    let fb = mel_filterbank(config, audio.sample_rate());
    let mut out = Vec::with_capacity(spec.frames * config.n_mels);
    for m in 0..spec.frames {
        let mags: Vec<f64> = spec.frame(m).iter().map(|c| c.norm()).collect();
        for band in fb.chunks_exact(spec.bins) {
            let v: f64 = band.iter().zip(&mags).map(|(w, a)| w * a).sum();
            out.push(v.max(LOG_FLOOR).ln());
        }
    }
    Ok(out)
}

/// Mean over scales of the mean absolute difference between log-mel
/// magnitudes. Symmetric, nonnegative and phase-blind.
pub fn mel_loss_multiscale(
    x: &AudioBuffer,
    x_hat: &AudioBuffer,
    scales: &[MelConfig],
) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::shape(format!(
            "length mismatch: {} vs {}",
            x.len(),
            x_hat.len()
        )));
    }
    if x.sample_rate() != x_hat.sample_rate() {
        return Err(Error::invalid(format!(
            "sample rate mismatch: {} vs {}",
            x.sample_rate(),
            x_hat.sample_rate()
        )));
    }
    if scales.is_empty() {
        return Err(Error::invalid("at least one mel scale is required"));
    }
    let mut total = 0.0;
    for cfg in scales {
        let a = log_mel(x, cfg)?;
        let b = log_mel(x_hat, cfg)?;
        let l1: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum();
        total += l1 / a.len() as f64;
    }
    Ok(total / scales.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64, sr: u32) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioBuffer::new((0..len).map(|_| rng.random_range(-0.5..0.5)).collect(), sr).unwrap()
    }

    #[test]
    fn identity_is_zero() {
        let x = noise(4000, 1, 16000);
        let scales = MelConfig::default_scales(16000);
        assert_eq!(mel_loss_multiscale(&x, &x, &scales).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_and_nonnegative() {
        let scales = MelConfig::default_scales(8000);
        for seed in 0..50 {
            let a = noise(1200, seed, 8000);
            let b = noise(1200, seed + 1000, 8000).scaled(0.3);
            let ab = mel_loss_multiscale(&a, &b, &scales).unwrap();
            let ba = mel_loss_multiscale(&b, &a, &scales).unwrap();
            assert!(ab > 0.0);
            assert_eq!(ab, ba);
        }
    }

    #[test]
    fn errors() {
        let a = noise(100, 1, 16000);
        let b = noise(101, 2, 16000);
        let scales = MelConfig::default_scales(16000);
        assert!(mel_loss_multiscale(&a, &b, &scales).is_err());
        assert!(mel_loss_multiscale(&a, &a, &[]).is_err());
        let bad = MelConfig {
            n_fft: 256,
            hop: 64,
            n_mels: 10,
            fmin: 0.0,
            fmax: 9000.0,
        };
        assert!(bad.validate(16000).is_err());
    }

    #[test]
    fn filterbank_rows_are_triangles() {
        let cfg = MelConfig::default_scales(16000)[0];
        let fb = mel_filterbank(&cfg, 16000);
        let bins = cfg.n_fft / 2 + 1;
        for band in fb.chunks_exact(bins) {
            assert!(band.iter().all(|&w| (0.0..=1.0).contains(&w)));
            assert!(band.iter().any(|&w| w > 0.0));
        }
    }

    #[test]
    fn mel_scale_round_trip() {
        for hz in [0.0, 100.0, 1000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-6);
        }
    }
}
