//! Synthetic signal generators: labeled harmonic "speech", noise, and
//! exponentially decaying room impulse responses.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::rng::{derive_named, rng_from_seed};

/// Highest harmonic frequency rendered for voiced segments.
const MAX_HARMONIC_HZ: f64 = 5000.0;
/// Reference frequency for the spectral tilt.
const TILT_REF_HZ: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub phone_class: u32,
    pub duration_ms: f64,
}

/// One synthetic utterance: a sequence of phone segments rendered with a
/// speaker-specific pitch, spectral tilt and gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceSpec {
    pub segments: Vec<Segment>,
    /// dB per octave relative to 500 Hz.
    pub speaker_tilt: f64,
    /// RMS level of the rendered harmonic stack.
    pub gain: f64,
    pub pitch_hz: f64,
    /// Level of the aspiration noise relative to `gain`.
    pub breath: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub sample_rate: u32,
    /// Label hop; equals the codec frame length.
    pub frame_len: usize,
    pub n_classes: u32,
}

/// Formant centers and bandwidths (Hz) for a phone class. Distinct classes
/// get distinct (F1, F2) pairs.
pub fn formants(phone_class: u32, n_classes: u32) -> [(f64, f64); 3] {
    let n = n_classes.max(2) as f64;
    let c = phone_class as f64;
    // stride coprime to most class counts spreads F1 independently of F2
    let f1_slot = ((phone_class * 5 + 2) % n_classes.max(1)) as f64;
    let f1 = 250.0 + 650.0 * f1_slot / (n - 1.0);
    let f2 = 900.0 + 1900.0 * c / (n - 1.0);
    let f3 = 2600.0 + 300.0 * ((phone_class % 3) as f64);
    [(f1, 90.0), (f2, 150.0), (f3, 250.0)]
}

fn envelope(freq: f64, formants: &[(f64, f64); 3]) -> f64 {
    let peaks: f64 = formants
        .iter()
        .zip([1.0, 0.7, 0.35])
        .map(|(&(center, bw), weight)| weight * (-0.5 * ((freq - center) / bw).powi(2)).exp())
        .sum();
    peaks + 0.01
}

/// Harmonic amplitudes for one class, normalized to unit RMS.
fn harmonic_amplitudes(
    phone_class: u32,
    n_classes: u32,
    pitch_hz: f64,
    tilt: f64,
    sample_rate: u32,
) -> Vec<f64> {
    let top = MAX_HARMONIC_HZ.min(0.45 * sample_rate as f64);
    let fm = formants(phone_class, n_classes);
    let mut amps: Vec<f64> = (1..)
        .map(|h| h as f64 * pitch_hz)
        .take_while(|&f| f <= top)
        .map(|f| envelope(f, &fm) * 10f64.powf(tilt * (f / TILT_REF_HZ).log2() / 20.0))
        .collect();
    let power: f64 = amps.iter().map(|a| a * a / 2.0).sum();
    if power > 0.0 {
        let s = power.sqrt();
        amps.iter_mut().for_each(|a| *a /= s);
    }
    amps
}

/// Fixed low-crest-factor phase for harmonic `h` (1-based) of `count`.
fn harmonic_phase(h: usize, count: usize) -> f64 {
    PI * (h * h) as f64 / count.max(1) as f64
}

fn segment_samples(duration_ms: f64, sample_rate: u32) -> usize {
    (duration_ms * sample_rate as f64 / 1000.0).round() as usize
}

/// Renders an utterance and its frame-level phone labels. Each segment is a
/// harmonic stack whose spectral envelope is a function of its phone class;
/// the frame label is the class covering the frame's center sample.
pub fn synth_clean(
    spec: &UtteranceSpec,
    config: &SynthConfig,
    seed: u64,
) -> Result<(AudioBuffer, Vec<u32>)> {
    if spec.segments.is_empty() {
        return Err(Error::invalid("utterance has no segments"));
    }
    if config.frame_len == 0 || config.sample_rate == 0 {
        return Err(Error::invalid("frame length and sample rate must be positive"));
    }
    if !(spec.pitch_hz > 0.0) || !spec.gain.is_finite() || spec.gain < 0.0 {
        return Err(Error::invalid("pitch must be positive and gain nonnegative"));
    }
    let mut bounds = Vec::with_capacity(spec.segments.len());
    let mut total = 0usize;
    for seg in &spec.segments {
        if seg.phone_class >= config.n_classes {
            return Err(Error::invalid(format!(
                "unknown phone class {} (have {})",
                seg.phone_class, config.n_classes
            )));
        }
        if !(seg.duration_ms > 0.0) {
            return Err(Error::invalid("segment durations must be positive"));
        }
        let n = segment_samples(seg.duration_ms, config.sample_rate).max(1);
        total += n;
        bounds.push(total);
    }

    let sr = config.sample_rate as f64;
    let mut rng = rng_from_seed(derive_named(seed, "breath"));
    let mut samples = Vec::with_capacity(total);
    let mut start = 0usize;
    for (seg, &end) in spec.segments.iter().zip(&bounds) {
        let amps = harmonic_amplitudes(
            seg.phone_class,
            config.n_classes,
            spec.pitch_hz,
            spec.speaker_tilt,
            config.sample_rate,
        );
        let count = amps.len();
        let step = 2.0 * PI * spec.pitch_hz / sr;
        for n in start..end {
            let base = step * n as f64;
            let voiced: f64 = amps
                .iter()
                .enumerate()
                .map(|(i, a)| a * ((i + 1) as f64 * base + harmonic_phase(i + 1, count)).cos())
                .sum();
            let breath: f64 = rng.sample::<f64, _>(StandardNormal) * spec.breath;
            samples.push((spec.gain * (voiced + breath)) as f32);
        }
        start = end;
    }

    let frames = total.div_ceil(config.frame_len);
    let labels = (0..frames)
        .map(|f| {
            let center = (f * config.frame_len + config.frame_len / 2).min(total - 1);
            let seg = bounds.partition_point(|&b| b <= center);
            spec.segments[seg].phone_class
        })
        .collect();
    Ok((AudioBuffer::new(samples, config.sample_rate)?, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Babble,
    Tonal,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::White, NoiseKind::Babble, NoiseKind::Tonal];
}

/// Base frequency of the tonal noise drawn for `seed`; its first five
/// multiples carry all of the tonal energy.
pub fn tonal_base_hz(seed: u64) -> f64 {
    rng_from_seed(derive_named(seed, "tonal")).random_range(100.0..400.0)
}

pub fn synth_noise(
    kind: NoiseKind,
    duration_secs: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<AudioBuffer> {
    if !(duration_secs > 0.0) {
        return Err(Error::invalid("noise duration must be positive"));
    }
    let len = ((duration_secs * sample_rate as f64).round() as usize).max(1);
    let sr = sample_rate as f64;
    let mut rng = rng_from_seed(derive_named(seed, "noise"));
    let samples: Vec<f64> = match kind {
        NoiseKind::White => (0..len)
            .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect(),
        NoiseKind::Tonal => {
            let base = tonal_base_hz(seed);
            let partials: Vec<(f64, f64)> = (0..5)
                .map(|_| (rng.random_range(0.5..1.0), rng.random_range(0.0..2.0 * PI)))
                .collect();
            (0..len)
                .map(|n| {
                    let t = n as f64 / sr;
                    partials
                        .iter()
                        .enumerate()
                        .map(|(h, &(a, ph))| 0.1 * a * (2.0 * PI * base * (h + 1) as f64 * t + ph).cos())
                        .sum()
                })
                .collect()
        }
        NoiseKind::Babble => {
            // several unsynchronized talkers with drifting pitch and slow
            // amplitude modulation
            let mut out = vec![0.0; len];
            for _ in 0..6 {
                let pitch = rng.random_range(90.0..260.0);
                let drift = rng.random_range(-0.15..0.15);
                let am_rate = rng.random_range(2.0..6.0);
                let am_phase = rng.random_range(0.0..2.0 * PI);
                let class = rng.random_range(0..12u32);
                let amps = harmonic_amplitudes(class, 12, pitch, -3.0, sample_rate);
                let phases: Vec<f64> = amps.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
                let mut phase = 0.0;
                for (n, o) in out.iter_mut().enumerate() {
                    let t = n as f64 / sr;
                    let f = pitch * (1.0 + drift * (2.0 * PI * 0.5 * t).sin());
                    phase += 2.0 * PI * f / sr;
                    let env = 0.5 + 0.5 * (2.0 * PI * am_rate * t + am_phase).sin();
                    let v: f64 = amps
                        .iter()
                        .zip(&phases)
                        .enumerate()
                        .map(|(i, (a, p))| a * ((i + 1) as f64 * phase + p).cos())
                        .sum();
                    *o += 0.03 * env * v;
                }
            }
            out
        }
    };
    AudioBuffer::new(samples.into_iter().map(|v| v as f32).collect(), sample_rate)
}

/// Parameters of a synthetic impulse response: a unit direct tap followed by
/// Gaussian noise under an exponential envelope that falls 60 dB over
/// `rt60_ms`, scaled so the tail carries `-drr_db` dB relative to the direct
/// tap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RirSpec {
    pub rt60_ms: f64,
    pub length: usize,
    pub sample_rate: u32,
    pub drr_db: f64,
}

pub fn synth_rir(spec: &RirSpec, seed: u64) -> Result<Vec<f64>> {
    if !(spec.rt60_ms > 0.0) {
        return Err(Error::invalid("rt60 must be positive"));
    }
    if spec.length == 0 {
        return Err(Error::invalid("rir length must be at least 1"));
    }
    let mut rng = rng_from_seed(derive_named(seed, "rir"));
    let n60 = spec.rt60_ms * spec.sample_rate as f64 / 1000.0;
    let mut rir = Vec::with_capacity(spec.length);
    rir.push(1.0);
    for n in 1..spec.length {
        let env = 10f64.powf(-3.0 * n as f64 / n60);
        rir.push(env * rng.sample::<f64, _>(StandardNormal));
    }
    let tail: f64 = rir[1..].iter().map(|v| v * v).sum();
    if tail > 0.0 {
        let target = 10f64.powf(-spec.drr_db / 10.0);
        let g = (target / tail).sqrt();
        rir[1..].iter_mut().for_each(|v| *v *= g);
    }
    Ok(rir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> SynthConfig {
        SynthConfig {
            sample_rate: 16000,
            frame_len: 200,
            n_classes: 12,
        }
    }

    fn spec(classes: &[u32]) -> UtteranceSpec {
        UtteranceSpec {
            segments: classes
                .iter()
                .map(|&c| Segment {
                    phone_class: c,
                    duration_ms: 100.0,
                })
                .collect(),
            speaker_tilt: -2.0,
            gain: 0.1,
            pitch_hz: 80.0,
            breath: 0.01,
        }
    }

    #[test]
    fn clean_is_deterministic() {
        let s = spec(&[1, 4, 7]);
        let a = synth_clean(&s, &config(), 9).unwrap();
        let b = synth_clean(&s, &config(), 9).unwrap();
        assert_eq!(a, b);
        let c = synth_clean(&s, &config(), 10).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn labels_cover_every_frame() {
        let mut s = spec(&[0, 3]);
        s.segments[1].duration_ms = 71.3;
        let (audio, labels) = synth_clean(&s, &config(), 1).unwrap();
        assert_eq!(labels.len(), audio.len().div_ceil(200));
        assert_eq!(labels[0], 0);
        assert_eq!(*labels.last().unwrap(), 3);
    }

    #[test]
    fn rejects_unknown_class() {
        assert!(synth_clean(&spec(&[12]), &config(), 0).is_err());
        assert!(synth_clean(&spec(&[]), &config(), 0).is_err());
    }

    #[test]
    fn formant_pairs_are_distinct() {
        let mut pairs: Vec<(u64, u64)> = (0..12)
            .map(|c| {
                let f = formants(c, 12);
                (f[0].0 as u64, f[1].0 as u64)
            })
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        assert_eq!(pairs.len(), 12);
    }

    #[test]
    fn white_noise_is_zero_mean() {
        let a = synth_noise(NoiseKind::White, 2.0, 16000, 5).unwrap();
        let n = a.len() as f64;
        let mean = a.samples().iter().map(|&v| v as f64).sum::<f64>() / n;
        let sd = a.power().sqrt();
        assert!(mean.abs() <= 3.0 * sd / n.sqrt());
        assert_eq!(a, synth_noise(NoiseKind::White, 2.0, 16000, 5).unwrap());
    }

    #[test]
    fn noise_has_power_and_rejects_bad_duration() {
        for kind in NoiseKind::ALL {
            let a = synth_noise(kind, 0.5, 8000, 2).unwrap();
            assert!(a.power() > 0.0, "{kind:?}");
            assert!(synth_noise(kind, 0.0, 8000, 2).is_err());
        }
    }

    #[test]
    fn rir_basics() {
        let tiny = RirSpec {
            rt60_ms: 1e-6,
            length: 1,
            sample_rate: 16000,
            drr_db: 10.0,
        };
        assert_eq!(synth_rir(&tiny, 3).unwrap(), vec![1.0]);
        let bad = RirSpec { rt60_ms: 0.0, ..tiny };
        assert!(synth_rir(&bad, 3).is_err());
        for rt60 in [50.0, 150.0, 400.0] {
            let s = RirSpec {
                rt60_ms: rt60,
                length: (rt60 * 16.0) as usize,
                sample_rate: 16000,
                drr_db: 0.0,
            };
            let r = synth_rir(&s, 11).unwrap();
            assert_eq!(r[0], 1.0);
            let half = r.len() / 2;
            let e1: f64 = r[..half].iter().map(|v| v * v).sum();
            let e2: f64 = r[half..].iter().map(|v| v * v).sum();
            assert!(e2 < e1);
        }
    }
}
