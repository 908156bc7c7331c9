//! Labeled synthetic corpus: clean harmonic utterances with frame-level phone
//! labels, reverberated by synthetic RIRs and mixed with noise at a random
//! SNR.

mod synth;

pub use synth::{
    formants, synth_clean, synth_noise, synth_rir, tonal_base_hz, NoiseKind, RirSpec, Segment,
    SynthConfig, UtteranceSpec,
};

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::dsp::{convolve_rir, mix_at_snr};
use crate::error::{Error, Result};
use crate::rng::{derive_named, derive_seed, rng_from_seed};

/// SNR range accepted anywhere in the corpus.
pub const SNR_RANGE_DB: (f64, f64) = (-10.0, 20.0);
/// Mixtures are rescaled so that no sample exceeds this magnitude.
const PEAK_LIMIT: f32 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub sample_rate: u32,
    /// Label hop, equal to the codec frame length.
    pub frame_len: usize,
    pub n_classes: u32,
    /// Inclusive range of segment counts per utterance.
    pub segments: (usize, usize),
    /// Segment duration range; durations are drawn as whole frames.
    pub segment_ms: (f64, f64),
    pub snr_db: (f64, f64),
    pub rt60_ms: (f64, f64),
    pub drr_db: (f64, f64),
    pub rir_ms: f64,
    /// Utterance RMS level range in dBFS.
    pub level_db: (f64, f64),
    pub tilt_db_per_octave: (f64, f64),
    /// Pitch is drawn as `m * sample_rate / frame_len` for `m` in this range.
    pub pitch_multiples: (u32, u32),
    pub breath: f64,
    pub noise_kinds: Vec<NoiseKind>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            frame_len: 200,
            n_classes: 12,
            segments: (8, 14),
            segment_ms: (80.0, 240.0),
            snr_db: SNR_RANGE_DB,
            rt60_ms: (100.0, 400.0),
            drr_db: (8.0, 16.0),
            rir_ms: 250.0,
            level_db: (-26.0, -18.0),
            tilt_db_per_octave: (-3.0, 1.0),
            pitch_multiples: (1, 2),
            breath: 0.01,
            noise_kinds: NoiseKind::ALL.to_vec(),
        }
    }
}

impl CorpusConfig {
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            sample_rate: self.sample_rate,
            frame_len: self.frame_len,
            n_classes: self.n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("corpus config: {m}")));
        if self.sample_rate == 0 || self.frame_len == 0 || self.n_classes == 0 {
            return bad("sample rate, frame length and class count must be positive");
        }
        if self.segments.0 == 0 || self.segments.0 > self.segments.1 {
            return bad("segment count range must be nonempty and start at 1 or more");
        }
        if !(self.segment_ms.0 > 0.0 && self.segment_ms.0 <= self.segment_ms.1) {
            return bad("segment duration range must be positive and ordered");
        }
        let (lo, hi) = self.snr_db;
        if !(SNR_RANGE_DB.0 <= lo && lo <= hi && hi <= SNR_RANGE_DB.1) {
            return bad("snr range must lie within [-10, 20] dB");
        }
        if !(self.rt60_ms.0 > 0.0 && self.rt60_ms.0 <= self.rt60_ms.1) || !(self.rir_ms > 0.0) {
            return bad("rt60 range and rir length must be positive");
        }
        if self.pitch_multiples.0 == 0 || self.pitch_multiples.0 > self.pitch_multiples.1 {
            return bad("pitch multiples must be positive and ordered");
        }
        if self.noise_kinds.is_empty() {
            return bad("at least one noise kind is required");
        }
        Ok(())
    }

    fn frame_ms(&self) -> f64 {
        self.frame_len as f64 * 1000.0 / self.sample_rate as f64
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Draws a random utterance. Segment durations are whole frames, so every
/// frame carries a single phone class.
pub fn random_utterance(config: &CorpusConfig, rng: &mut impl Rng) -> UtteranceSpec {
    let frame_ms = config.frame_ms();
    let min_frames = (config.segment_ms.0 / frame_ms).ceil().max(1.0) as usize;
    let max_frames = ((config.segment_ms.1 / frame_ms).floor() as usize).max(min_frames);
    let n_segments = rng.random_range(config.segments.0..=config.segments.1);
    let mut segments = Vec::with_capacity(n_segments);
    let mut prev = None;
    for _ in 0..n_segments {
        let mut class = rng.random_range(0..config.n_classes);
        if config.n_classes > 1 && Some(class) == prev {
            class = (class + 1 + rng.random_range(0..config.n_classes - 1)) % config.n_classes;
        }
        prev = Some(class);
        let frames = rng.random_range(min_frames..=max_frames);
        segments.push(Segment {
            phone_class: class,
            duration_ms: frames as f64 * frame_ms,
        });
    }
    let level_db = uniform(rng, config.level_db);
    let multiple = rng.random_range(config.pitch_multiples.0..=config.pitch_multiples.1);
    UtteranceSpec {
        segments,
        speaker_tilt: uniform(rng, config.tilt_db_per_octave),
        gain: 10f64.powf(level_db / 20.0),
        pitch_hz: multiple as f64 * config.sample_rate as f64 / config.frame_len as f64,
        breath: config.breath,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub clean_path: PathBuf,
    pub noisy_path: PathBuf,
    pub label_path: PathBuf,
    pub snr_db: f64,
    pub rir_id: u64,
    pub seed: u64,
    pub noise_kind: NoiseKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub config: CorpusConfig,
    pub master_seed: u64,
    pub entries: Vec<ManifestEntry>,
    /// Directory that entry paths are relative to; not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl CorpusManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: CorpusManifest =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, relative: &Path) -> PathBuf {
        self.root.join(relative)
    }

    pub fn load_entry(&self, entry: &ManifestEntry) -> Result<LoadedEntry> {
        let clean = AudioBuffer::read_wav(self.resolve(&entry.clean_path))?;
        let noisy = AudioBuffer::read_wav(self.resolve(&entry.noisy_path))?;
        let label_path = self.resolve(&entry.label_path);
        let text = fs::read_to_string(&label_path).map_err(|e| Error::io(&label_path, e))?;
        let labels: Vec<u32> = serde_json::from_str(&text).map_err(|e| Error::json(&label_path, e))?;
        Ok(LoadedEntry {
            id: entry.id.clone(),
            clean,
            noisy,
            labels,
        })
    }

    /// Loads every entry, in manifest order.
    pub fn load_all(&self) -> Result<Vec<LoadedEntry>> {
        self.entries.par_iter().map(|e| self.load_entry(e)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct LoadedEntry {
    pub id: String,
    pub clean: AudioBuffer,
    pub noisy: AudioBuffer,
    pub labels: Vec<u32>,
}

/// One generated training pair before it is written to disk.
#[derive(Debug, Clone)]
pub struct GeneratedPair {
    /// Reverberant clean speech: the enhancement target.
    pub clean: AudioBuffer,
    pub noisy: AudioBuffer,
    pub labels: Vec<u32>,
    pub snr_db: f64,
    pub rir_id: u64,
    pub noise_kind: NoiseKind,
}

/// Generates pair `seed` in memory: clean speech is reverberated, then noise
/// is added at a uniformly drawn SNR. Both signals are rescaled together if
/// the mixture would exceed the peak limit, which leaves the SNR unchanged.
pub fn generate_pair(config: &CorpusConfig, seed: u64) -> Result<GeneratedPair> {
    let mut rng = rng_from_seed(derive_named(seed, "entry"));
    let spec = random_utterance(config, &mut rng);
    let (dry, labels) = synth_clean(&spec, &config.synth_config(), derive_named(seed, "clean"))?;

    let rir_id = derive_named(seed, "rir-id");
    let rir = synth_rir(
        &RirSpec {
            rt60_ms: uniform(&mut rng, config.rt60_ms),
            length: ((config.rir_ms * config.sample_rate as f64 / 1000.0) as usize).max(1),
            sample_rate: config.sample_rate,
            drr_db: uniform(&mut rng, config.drr_db),
        },
        rir_id,
    )?;
    let clean = convolve_rir(&dry, &rir)?;

    let noise_kind = config.noise_kinds[rng.random_range(0..config.noise_kinds.len())];
    let noise = synth_noise(
        noise_kind,
        clean.duration_secs(),
        config.sample_rate,
        derive_named(seed, "noise"),
    )?;
    let snr_db = uniform(&mut rng, config.snr_db);
    let noisy = mix_at_snr(&clean, &noise, snr_db)?;

    let peak = noisy.peak().max(clean.peak());
    let (clean, noisy) = if peak > PEAK_LIMIT {
        let g = PEAK_LIMIT / peak;
        (clean.scaled(g), noisy.scaled(g))
    } else {
        (clean, noisy)
    };
    Ok(GeneratedPair {
        clean,
        noisy,
        labels,
        snr_db,
        rir_id,
        noise_kind,
    })
}

/// Builds `n_utts` pairs under `out_dir` and writes `manifest.json` there.
/// The result depends only on `(config, master_seed)`.
pub fn build_corpus(
    n_utts: usize,
    config: &CorpusConfig,
    master_seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<CorpusManifest> {
    if n_utts == 0 {
        return Err(Error::invalid("corpus needs at least one utterance"));
    }
    config.validate()?;
    let out_dir = out_dir.as_ref();
    for sub in ["clean", "noisy", "labels"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let entries = (0..n_utts)
        .into_par_iter()
        .map(|i| -> Result<ManifestEntry> {
            let seed = derive_seed(master_seed, i as u64);
            let pair = generate_pair(config, seed)?;
            let id = format!("utt_{i:05}");
            let clean_path = PathBuf::from("clean").join(format!("{id}.wav"));
            let noisy_path = PathBuf::from("noisy").join(format!("{id}.wav"));
            let label_path = PathBuf::from("labels").join(format!("{id}.json"));
            pair.clean.write_wav(out_dir.join(&clean_path))?;
            pair.noisy.write_wav(out_dir.join(&noisy_path))?;
            let labels = serde_json::to_string(&pair.labels).map_err(|e| Error::json(&label_path, e))?;
            let full = out_dir.join(&label_path);
            fs::write(&full, labels).map_err(|e| Error::io(&full, e))?;
            Ok(ManifestEntry {
                id,
                clean_path,
                noisy_path,
                label_path,
                snr_db: pair.snr_db,
                rir_id: pair.rir_id,
                seed,
                noise_kind: pair.noise_kind,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = CorpusManifest {
        config: config.clone(),
        master_seed,
        entries,
        root: out_dir.to_path_buf(),
    };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(CorpusConfig::default().validate().is_ok());
        let c = CorpusConfig {
            snr_db: (-20.0, 0.0),
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = CorpusConfig {
            noise_kinds: vec![],
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn random_utterances_use_whole_frames() {
        let cfg = CorpusConfig::default();
        let mut rng = rng_from_seed(4);
        for _ in 0..20 {
            let u = random_utterance(&cfg, &mut rng);
            assert!((cfg.segments.0..=cfg.segments.1).contains(&u.segments.len()));
            for s in &u.segments {
                let frames = s.duration_ms / 12.5;
                assert!((frames - frames.round()).abs() < 1e-9);
                assert!(s.duration_ms >= 80.0 && s.duration_ms <= 240.0);
            }
            assert_eq!(u.pitch_hz % 80.0, 0.0);
        }
    }

    #[test]
    fn generated_pair_hits_its_snr() {
        let cfg = CorpusConfig::default();
        for i in 0..5 {
            let p = generate_pair(&cfg, derive_seed(1, i)).unwrap();
            assert!(p.noisy.peak() <= PEAK_LIMIT + 1e-6);
            let snr = crate::dsp::measured_snr_db(&p.clean, &p.noisy).unwrap();
            assert!((snr - p.snr_db).abs() < 1e-3, "{snr} vs {}", p.snr_db);
            assert_eq!(p.labels.len(), p.clean.len().div_ceil(cfg.frame_len));
        }
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(build_corpus(0, &CorpusConfig::default(), 1, dir.path()).is_err());
    }
}
