use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::codec::Codec;
use crate::dsp::{mel_loss_multiscale, segmental_snr_db, MelConfig};
use crate::error::{Error, Result};

pub const SEG_SNR_FLOOR_DB: f64 = -10.0;
pub const SEG_SNR_CEIL_DB: f64 = 35.0;

/// One (reference, estimate) pair. Without labels, phoneme accuracy is
/// measured against the head's predictions on the reference.
#[derive(Debug, Clone, Copy)]
pub struct EvalPair<'a> {
    pub id: &'a str,
    pub reference: &'a AudioBuffer,
    pub estimate: &'a AudioBuffer,
    pub labels: Option<&'a [u32]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMetrics {
    pub id: String,
    pub seg_snr_db: f64,
    pub mel_distance: f64,
    pub token_accuracy: Vec<f64>,
    pub phoneme_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seg_snr_db: f64,
    pub mel_distance: f64,
    /// Mean per layer, semantic first.
    pub token_accuracy: Vec<f64>,
    pub phoneme_accuracy: f64,
    pub utterances: Vec<UtteranceMetrics>,
}

fn agreement(a: &[u32], b: &[u32]) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

pub fn evaluate_pair(codec: &Codec, pair: &EvalPair<'_>, scales: &[MelConfig]) -> Result<UtteranceMetrics> {
    let (r, e) = (pair.reference, pair.estimate);
    if r.len() != e.len() {
        return Err(Error::shape(format!(
            "{}: reference has {} samples, estimate {}",
            pair.id,
            r.len(),
            e.len()
        )));
    }
    let segment = (r.sample_rate() / 100).max(1) as usize;
    let seg_snr_db = segmental_snr_db(r, e, segment, SEG_SNR_FLOOR_DB, SEG_SNR_CEIL_DB)?;
    let mel_distance = mel_loss_multiscale(r, e, scales)?;
    let qr = codec.quantize(&codec.features(r)?)?;
    let qe = codec.quantize(&codec.features(e)?)?;
    let token_accuracy = qr
        .tokens
        .layers()
        .iter()
        .zip(qe.tokens.layers())
        .map(|(a, b)| agreement(a, b))
        .collect();
    let head = codec.phoneme_head();
    let predicted = head.predict(&qe.semantic_emb)?;
    let phoneme_accuracy = match pair.labels {
        Some(labels) => {
            if labels.len() != predicted.len() {
                return Err(Error::shape(format!(
                    "{}: {} labels for {} frames",
                    pair.id,
                    labels.len(),
                    predicted.len()
                )));
            }
            agreement(&predicted, labels)
        }
        None => agreement(&predicted, &head.predict(&qr.semantic_emb)?),
    };
    Ok(UtteranceMetrics {
        id: pair.id.to_string(),
        seg_snr_db,
        mel_distance,
        token_accuracy,
        phoneme_accuracy,
    })
}

/// Segmental SNR (10 ms segments, clamped to [-10, 35] dB), multi-scale
/// mel distance, per-layer token agreement after encoding both signals, and
/// phoneme accuracy of the head on the estimate. Means are over pairs.
pub fn evaluate(codec: &Codec, pairs: &[EvalPair<'_>]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let scales = MelConfig::default_scales(codec.config().sample_rate);
    let utterances: Vec<UtteranceMetrics> = pairs
        .par_iter()
        .map(|p| evaluate_pair(codec, p, &scales))
        .collect::<Result<_>>()?;
    let n = utterances.len() as f64;
    let mean = |f: &dyn Fn(&UtteranceMetrics) -> f64| utterances.iter().map(f).sum::<f64>() / n;
    let layers = codec.config().n_layers();
    let token_accuracy = (0..layers).map(|i| mean(&|u| u.token_accuracy[i])).collect();
    Ok(EvalReport {
        seg_snr_db: mean(&|u| u.seg_snr_db),
        mel_distance: mean(&|u| u.mel_distance),
        token_accuracy,
        phoneme_accuracy: mean(&|u| u.phoneme_accuracy),
        utterances,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports contain only finite numbers and strings")
    }

    /// Aligned plain-text table with one row per utterance and a mean row.
    pub fn to_table(&self) -> String {
        let layers = self.token_accuracy.len();
        let mut header = vec!["id".to_string(), "seg_snr_db".into(), "mel_dist".into(), "phoneme_acc".into()];
        header.extend((0..layers).map(|i| if i == 0 { "tok_sem".to_string() } else { format!("tok_a{i}") }));
        let row = |id: &str, snr: f64, mel: f64, ph: f64, tok: &[f64]| {
            let mut r = vec![id.to_string(), format!("{snr:.2}"), format!("{mel:.4}"), format!("{ph:.3}")];
            r.extend(tok.iter().map(|t| format!("{t:.3}")));
            r
        };
        let mut rows = vec![header];
        for u in &self.utterances {
            rows.push(row(&u.id, u.seg_snr_db, u.mel_distance, u.phoneme_accuracy, &u.token_accuracy));
        }
        rows.push(row("mean", self.seg_snr_db, self.mel_distance, self.phoneme_accuracy, &self.token_accuracy));
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let cells: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, &w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}
