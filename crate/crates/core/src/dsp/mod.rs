//! Deterministic signal mathematics: DCT framing, STFT and mel analysis, the
//! multi-scale mel loss and the corpus mixing primitives.

mod dct;
mod mel;
mod stft;

pub use dct::{frame_transform, inverse_frame_transform, FrameTransform};
pub use mel::{
    hz_to_mel, log_mel, mel_filterbank, mel_loss_multiscale, mel_to_hz, MelConfig, LOG_FLOOR,
};
pub use stft::{check_cola, istft, stft, Spectrogram, Window};

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Gain applied to `noise` so that `clean + gain * noise` has the requested
/// SNR. Noise power is measured over the first `clean.len()` samples.
pub fn noise_gain_for_snr(clean: &AudioBuffer, noise: &AudioBuffer, snr_db: f64) -> Result<f64> {
    if noise.len() < clean.len() {
        return Err(Error::invalid(format!(
            "noise has {} samples, clean needs {}",
            noise.len(),
            clean.len()
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::invalid("snr must be finite"));
    }
    let p_clean = clean.power();
    let p_noise = power(&noise.samples()[..clean.len()]);
    if p_clean <= 0.0 {
        return Err(Error::invalid("clean signal has zero power"));
    }
    if p_noise <= 0.0 {
        return Err(Error::invalid("noise has zero power"));
    }
    Ok((p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// Adds `noise` (cropped to the clean length) to `clean` at `snr_db`.
pub fn mix_at_snr(clean: &AudioBuffer, noise: &AudioBuffer, snr_db: f64) -> Result<AudioBuffer> {
    if clean.sample_rate() != noise.sample_rate() {
        return Err(Error::invalid("clean and noise sample rates differ"));
    }
    let g = noise_gain_for_snr(clean, noise, snr_db)?;
    let samples = clean
        .samples()
        .iter()
        .zip(noise.samples())
        .map(|(&c, &n)| (c as f64 + g * n as f64) as f32)
        .collect();
    AudioBuffer::new(samples, clean.sample_rate())
}

/// SNR in dB of `reference` against `degraded - reference`.
pub fn measured_snr_db(reference: &AudioBuffer, degraded: &AudioBuffer) -> Result<f64> {
    if reference.len() != degraded.len() {
        return Err(Error::shape("length mismatch"));
    }
    let noise: Vec<f64> = degraded
        .samples()
        .iter()
        .zip(reference.samples())
        .map(|(&d, &r)| d as f64 - r as f64)
        .collect();
    let p_noise = noise.iter().map(|v| v * v).sum::<f64>();
    let p_ref = reference.power() * reference.len() as f64;
    Ok(10.0 * (p_ref / p_noise).log10())
}

fn power(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64
}

/// Linear convolution with `rir`, truncated to the input length. Computed in
/// the frequency domain.
pub fn convolve_rir(audio: &AudioBuffer, rir: &[f64]) -> Result<AudioBuffer> {
    if rir.is_empty() {
        return Err(Error::invalid("empty impulse response"));
    }
    let n = audio.len();
    if n == 0 {
        return Ok(audio.clone());
    }
    let taps = rir.len().min(n);
    let size = (n + taps - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);

    let mut a = vec![Complex64::new(0.0, 0.0); size];
    for (slot, &s) in a.iter_mut().zip(audio.samples()) {
        slot.re = s as f64;
    }
    let mut b = vec![Complex64::new(0.0, 0.0); size];
    for (slot, &h) in b.iter_mut().zip(&rir[..taps]) {
        slot.re = h;
    }
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    inv.process(&mut a);
    let scale = 1.0 / size as f64;
    let samples = a[..n].iter().map(|c| (c.re * scale) as f32).collect();
    AudioBuffer::new(samples, audio.sample_rate())
}

/// Mean per-segment SNR with each segment's value clamped to `[lo, hi]` dB.
/// Segments where both signal and error are silent count as `hi`.
pub fn segmental_snr_db(
    reference: &AudioBuffer,
    estimate: &AudioBuffer,
    segment_len: usize,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::shape(format!(
            "length mismatch: {} vs {}",
            reference.len(),
            estimate.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::EmptyInput);
    }
    if segment_len == 0 {
        return Err(Error::invalid("segment length must be positive"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (r, e) in reference
        .samples()
        .chunks(segment_len)
        .zip(estimate.samples().chunks(segment_len))
    {
        let sig: f64 = r.iter().map(|&v| (v as f64).powi(2)).sum();
        let err: f64 = r
            .iter()
            .zip(e)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum();
        let snr = if err == 0.0 {
            hi
        } else if sig == 0.0 {
            lo
        } else {
            (10.0 * (sig / err).log10()).clamp(lo, hi)
        };
        total += snr;
        count += 1;
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn buf(x: &[f32]) -> AudioBuffer {
        AudioBuffer::new(x.to_vec(), 16000).unwrap()
    }

    #[test]
    fn mix_examples() {
        let clean = buf(&[1.0, -1.0, 1.0, -1.0]);
        let noise = buf(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(mix_at_snr(&clean, &noise, 0.0).unwrap().samples(), &[2.0, 0.0, 2.0, 0.0]);
        let out = mix_at_snr(&clean, &noise, 20.0).unwrap();
        for (a, b) in out.samples().iter().zip([1.1f32, -0.9, 1.1, -0.9]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mix_errors() {
        let clean = buf(&[1.0, -1.0]);
        assert!(mix_at_snr(&clean, &buf(&[0.0, 0.0]), 0.0).is_err());
        assert!(mix_at_snr(&buf(&[0.0, 0.0]), &buf(&[1.0, 1.0]), 0.0).is_err());
        assert!(mix_at_snr(&clean, &buf(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn mixed_snr_matches_request() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let len: usize = rng.random_range(100..3000);
            let clean: Vec<f32> = (0..len).map(|_| rng.random_range(-0.5..0.5)).collect();
            let noise: Vec<f32> = (0..len + 50).map(|_| rng.random_range(-1.0..1.0)).collect();
            let snr = rng.random_range(-10.0..20.0);
            let clean = buf(&clean);
            let out = mix_at_snr(&clean, &buf(&noise), snr).unwrap();
            let measured = measured_snr_db(&clean, &out).unwrap();
            assert!((measured - snr).abs() < 1e-6, "{measured} vs {snr}");
        }
    }

    fn naive_convolve(x: &[f32], h: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|n| {
                (0..h.len())
                    .filter(|&k| k <= n)
                    .map(|k| h[k] * x[n - k] as f64)
                    .sum()
            })
            .collect()
    }

    #[test]
    fn convolution_basics() {
        let x = buf(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(convolve_rir(&x, &[1.0]).unwrap().samples(), x.samples());
        let d = convolve_rir(&x, &[0.0, 1.0]).unwrap();
        for (a, b) in d.samples().iter().zip([0.0f32, 1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(convolve_rir(&x, &[]).is_err());
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.random_range(1..600);
            let m = rng.random_range(1..200);
            let x: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = convolve_rir(&buf(&x), &h).unwrap();
            let slow = naive_convolve(&x, &h);
            for (a, b) in fast.samples().iter().zip(&slow) {
                assert!((*a as f64 - b).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn segmental_snr_identity_and_clamp() {
        let x = buf(&[0.5; 480]);
        assert_eq!(segmental_snr_db(&x, &x, 160, -10.0, 35.0).unwrap(), 35.0);
        let z = buf(&[0.0; 480]);
        assert_eq!(segmental_snr_db(&x, &z, 160, -10.0, 35.0).unwrap(), 0.0);
        let neg = x.scaled(-1.0);
        // error is 4x signal power
        let v = segmental_snr_db(&x, &neg, 160, -10.0, 35.0).unwrap();
        assert!((v - 10.0 * 0.25f64.log10()).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn convolution_is_linear(
            x in prop::collection::vec(-1.0f32..1.0, 1..300),
            seed in any::<u64>(),
            a in -2.0f32..2.0,
            b in -2.0f32..2.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f32> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..rng.random_range(1..50)).map(|_| rng.random_range(-1.0..1.0)).collect();
            let combo: Vec<f32> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = convolve_rir(&buf(&combo), &h).unwrap();
            let cx = convolve_rir(&buf(&x), &h).unwrap();
            let cy = convolve_rir(&buf(&y), &h).unwrap();
            for i in 0..x.len() {
                let rhs = a * cx.samples()[i] + b * cy.samples()[i];
                prop_assert!((lhs.samples()[i] - rhs).abs() <= 1e-5);
            }
        }
    }
}
