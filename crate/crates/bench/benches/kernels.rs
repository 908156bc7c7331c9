use criterion::{criterion_group, criterion_main, Criterion};
use sise_bench::small_codec;
use sise_core::diffusion::{forward_mask, reverse_step, Condition, DiffusionSchedule, LayerMaskState, StepParams};
use sise_core::predictor::{LinearConfig, LinearPredictor, MaskedExample, Predictor, Trainable};
use sise_core::rng::rng_from_seed;

fn codec_benches(c: &mut Criterion) {
    let (codec, noisy) = small_codec(8, 256);
    let features = codec.features(&noisy).expect("features");
    c.bench_function("rvq_quantize", |b| b.iter(|| codec.quantize(&features).expect("quantize")));
    let tokens = codec.encode(&noisy).expect("encode");
    c.bench_function("codec_decode", |b| b.iter(|| codec.decode(&tokens, Some(noisy.len())).expect("decode")));
}

fn predictor_benches(c: &mut Criterion) {
    let (codec, noisy) = small_codec(8, 256);
    let y_en = codec.features(&noisy).expect("features");
    let k = codec.config().codebook_size;
    let config = LinearConfig {
        codebook_size: k,
        n_slots: 1,
        cond_dim: codec.config().frame_len,
        embed_dim: 32,
        init_scale: 0.1,
    };
    let model = LinearPredictor::new(config, 3).expect("model");
    let cond = Condition::semantic(&y_en);
    let len = y_en.frames();
    let state = LayerMaskState::fully_masked(len, k);
    c.bench_function("linear_predict", |b| b.iter(|| model.predict(state.values(), &cond).expect("predict")));

    let schedule = DiffusionSchedule::default();
    let params = StepParams {
        top_k: 20,
        temperature: 1.0,
        gumbel: true,
    };
    c.bench_function("reverse_step", |b| {
        let mut rng = rng_from_seed(5);
        b.iter(|| reverse_step(&state, &model, &cond, 1.0, 1.0 / 15.0, &schedule, &params, &mut rng).expect("step"))
    });

    let target = codec.encode(&noisy).expect("encode").semantic().to_vec();
    let mut rng = rng_from_seed(9);
    let masked = forward_mask(&target, k, 0.7, &schedule, &mut rng).expect("mask");
    let batch = vec![MaskedExample {
        target: &target,
        state: masked.values().to_vec(),
        cond: Condition::semantic(&y_en),
    }];
    c.bench_function("linear_loss_and_grad", |b| b.iter(|| model.loss_and_grad(&batch).expect("grad")));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = codec_benches, predictor_benches
}
criterion_main!(benches);
