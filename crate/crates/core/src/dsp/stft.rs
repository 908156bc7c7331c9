//! Centered short-time Fourier transform and its weighted overlap-add inverse.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Periodic Hann.
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

/// One-sided complex spectrogram, `frames × (n_fft / 2 + 1)` row-major.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub n_fft: usize,
    pub hop: usize,
    pub window: Window,
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn frame(&self, m: usize) -> &[Complex64] {
        &self.data[m * self.bins..(m + 1) * self.bins]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    /// Energy of frame `m` over the full two-sided spectrum, divided by
    /// `n_fft`. By Parseval this equals the windowed frame's time energy.
    pub fn frame_energy(&self, m: usize) -> f64 {
        let n = self.n_fft;
        self.frame(m)
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let weight = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
                weight * c.norm_sqr()
            })
            .sum::<f64>()
            / n as f64
    }
}

fn check_params(n_fft: usize, hop: usize) -> Result<()> {
    if n_fft < 2 {
        return Err(Error::invalid("n_fft must be at least 2"));
    }
    if hop == 0 || hop > n_fft {
        return Err(Error::invalid(format!("hop {hop} must be in 1..={n_fft}")));
    }
    Ok(())
}

/// Zero-padded windowed frame `m` of a centered STFT.
pub(crate) fn centered_frame(x: &[f32], m: usize, hop: usize, win: &[f64], out: &mut [f64]) {
    let n = win.len();
    let start = (m * hop) as isize - (n / 2) as isize;
    for (i, o) in out.iter_mut().enumerate() {
        let idx = start + i as isize;
        *o = if idx >= 0 && (idx as usize) < x.len() {
            x[idx as usize] as f64 * win[i]
        } else {
            0.0
        };
    }
}

pub(crate) fn stft_frame_count(len: usize, hop: usize) -> usize {
    1 + len / hop
}

/// Centered STFT: the signal is zero-padded by `n_fft / 2` on both sides and
/// frame `m` is centered on sample `m * hop`.
pub fn stft(audio: &AudioBuffer, n_fft: usize, hop: usize, window: Window) -> Result<Spectrogram> {
    check_params(n_fft, hop)?;
    let x = audio.samples();
    let win = window.coefficients(n_fft);
    let frames = stft_frame_count(x.len(), hop);
    let bins = n_fft / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut real = vec![0.0; n_fft];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut data = Vec::with_capacity(frames * bins);
    for m in 0..frames {
        centered_frame(x, m, hop, &win, &mut real);
        for (b, &r) in buf.iter_mut().zip(&real) {
            *b = Complex64::new(r, 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectrogram {
        n_fft,
        hop,
        window,
        frames,
        bins,
        data,
    })
}

/// Checks that the squared window overlap-adds to a constant at this hop, the
/// condition under which [`istft`] is an exact inverse.
pub fn check_cola(window: Window, n_fft: usize, hop: usize) -> Result<()> {
    check_params(n_fft, hop)?;
    let w = window.coefficients(n_fft);
    let sums: Vec<f64> = (0..hop)
        .map(|r| (r..n_fft).step_by(hop).map(|i| w[i] * w[i]).sum())
        .collect();
    let max = sums.iter().cloned().fold(f64::MIN, f64::max);
    let min = sums.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 || (max - min) > 1e-9 * max {
        return Err(Error::invalid(format!(
            "window {window:?} with n_fft {n_fft} and hop {hop} does not satisfy COLA"
        )));
    }
    Ok(())
}

/// Inverse of [`stft`] by weighted overlap-add, truncated to `len` samples.
pub fn istft(spec: &Spectrogram, len: usize, sample_rate: u32) -> Result<AudioBuffer> {
    check_cola(spec.window, spec.n_fft, spec.hop)?;
    let n = spec.n_fft;
    let hop = spec.hop;
    let half = n / 2;
    if spec.frames < stft_frame_count(len, hop) {
        return Err(Error::invalid(format!(
            "{} frames cannot cover {len} samples",
            spec.frames
        )));
    }
    let win = spec.window.coefficients(n);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let padded_len = (spec.frames - 1) * hop + n;
    let mut acc = vec![0.0f64; padded_len];
    let mut norm = vec![0.0f64; padded_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for m in 0..spec.frames {
        let frame = spec.frame(m);
        buf[..spec.bins].copy_from_slice(frame);
        for k in spec.bins..n {
            buf[k] = frame[n - k].conj();
        }
        ifft.process(&mut buf);
        let start = m * hop;
        for i in 0..n {
            acc[start + i] += buf[i].re / n as f64 * win[i];
            norm[start + i] += win[i] * win[i];
        }
    }
    let samples = (0..len)
        .map(|i| {
            let d = norm[i + half];
            if d > 1e-12 {
                (acc[i + half] / d) as f32
            } else {
                0.0
            }
        })
        .collect();
    AudioBuffer::new(samples, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_audio(len: usize, seed: u64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioBuffer::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect(), 16000).unwrap()
    }

    #[test]
    fn bin_centered_tone_stays_in_its_bin() {
        let n = 256;
        let k = 12;
        let x: Vec<f32> = (0..4096)
            .map(|i| (2.0 * std::f64::consts::PI * k as f64 * i as f64 / n as f64 + 0.3).cos() as f32)
            .collect();
        let spec = stft(&AudioBuffer::new(x, 16000).unwrap(), n, 64, Window::Rectangular).unwrap();
        // frames that lie entirely inside the signal
        for m in 2..spec.frames - 3 {
            let total = spec.frame_energy(m);
            let in_bin = 2.0 * spec.frame(m)[k].norm_sqr() / n as f64;
            assert!(in_bin >= 0.99 * total, "frame {m}: {in_bin} of {total}");
        }
    }

    #[test]
    fn parseval_per_frame() {
        let audio = random_audio(3000, 1);
        let n = 512;
        let hop = 128;
        let spec = stft(&audio, n, hop, Window::Hann).unwrap();
        let win = Window::Hann.coefficients(n);
        let mut frame = vec![0.0; n];
        for m in 0..spec.frames {
            centered_frame(audio.samples(), m, hop, &win, &mut frame);
            let e_time: f64 = frame.iter().map(|v| v * v).sum();
            let e_freq = spec.frame_energy(m);
            assert!((e_time - e_freq).abs() <= 1e-4 * e_time.max(1e-12));
        }
    }

    #[test]
    fn hann_quarter_hop_round_trip() {
        for (len, seed) in [(1000, 2), (4097, 3), (17, 4)] {
            let audio = random_audio(len, seed);
            let spec = stft(&audio, 256, 64, Window::Hann).unwrap();
            let back = istft(&spec, len, 16000).unwrap();
            for (a, b) in back.samples().iter().zip(audio.samples()) {
                assert!((a - b).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn zeros_in_zeros_out() {
        let spec = stft(&AudioBuffer::zeros(1000, 16000).unwrap(), 128, 32, Window::Hann).unwrap();
        assert!(spec.data.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn non_cola_is_rejected_for_inversion() {
        assert!(check_cola(Window::Hann, 256, 64).is_ok());
        assert!(check_cola(Window::Rectangular, 256, 256).is_ok());
        assert!(check_cola(Window::Hann, 256, 128).is_err());
        assert!(check_cola(Window::Hann, 256, 100).is_err());
        let spec = stft(&random_audio(500, 5), 256, 128, Window::Hann).unwrap();
        assert!(istft(&spec, 500, 16000).is_err());
    }
}
