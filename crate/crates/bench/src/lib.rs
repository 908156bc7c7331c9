//! Shared fixtures for the criterion benchmarks.

use sise_core::codec::CodecTrainConfig;
use sise_core::corpus::{generate_pair, CorpusConfig};
use sise_core::features::FeatureFrames;
use sise_core::rng::derive_seed;
use sise_core::{AudioBuffer, Codec, CodecConfig};

/// A small codec trained on `n` synthetic utterances, plus one held-out
/// noisy signal.
pub fn small_codec(n: u64, codebook_size: usize) -> (Codec, AudioBuffer) {
    let corpus = CorpusConfig::default();
    let pairs: Vec<_> = (0..=n).map(|i| generate_pair(&corpus, derive_seed(7, i)).expect("synthetic pair")).collect();
    let config = CodecConfig {
        codebook_size,
        ..CodecConfig::default()
    };
    let features: Vec<FeatureFrames> = pairs[..n as usize]
        .iter()
        .map(|p| config.features(&p.clean).expect("features"))
        .collect();
    let all = FeatureFrames::concat(&features).expect("concat");
    let labels: Vec<u32> = pairs[..n as usize].iter().flat_map(|p| p.labels.iter().copied()).collect();
    let train = CodecTrainConfig {
        kmeans_iters: 5,
        ema_epochs: 1,
        ..CodecTrainConfig::default()
    };
    let (codec, _) = Codec::train(config, &train, &all, &labels, 1).expect("codec training");
    (codec, pairs[n as usize].noisy.clone())
}
