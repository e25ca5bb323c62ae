use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use dyad_core::autodiff::Tape;
use dyad_core::config::{ExperimentConfig, Profile};
use dyad_core::metrics::{frechet_distance, tlcc};
use dyad_core::predictor::{history, ListenerModel};
use dyad_core::rng::RngStreams;
use dyad_core::vqvae::{quantize, Codebook};
use rand::Rng;

fn uniform(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = RngStreams::new(seed).stream("bench");
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn matmul_backward(c: &mut Criterion) {
    let (a, b) = (uniform(64 * 64, 1), uniform(64 * 64, 2));
    c.bench_function("matmul 64x64 forward+backward", |bench| {
        bench.iter(|| {
            let tape = Tape::<f32>::new();
            let x = tape.leaf(&[64, 64], a.iter().map(|&v| v as f32).collect(), true).unwrap();
            let y = tape.leaf(&[64, 64], b.iter().map(|&v| v as f32).collect(), true).unwrap();
            x.matmul(&y).unwrap().softmax().unwrap().sum().unwrap().backward().unwrap();
            black_box(x.grad())
        })
    });
}

fn quantize_codebook(c: &mut Criterion) {
    let book: Vec<f32> = uniform(200 * 64, 3).into_iter().map(|v| v as f32).collect();
    let latent: Vec<f32> = uniform(8 * 64, 4).into_iter().map(|v| v as f32).collect();
    let cb = Codebook::new(200, 64, &book).unwrap();
    c.bench_function("quantize 8 latents against 200x64", |bench| {
        bench.iter(|| black_box(quantize(&cb, black_box(&latent)).unwrap()))
    });
}

fn fd(c: &mut Criterion) {
    let a: Vec<Vec<f64>> = uniform(2000 * 56, 5).chunks(56).map(<[f64]>::to_vec).collect();
    let b: Vec<Vec<f64>> = uniform(2000 * 56, 6).chunks(56).map(<[f64]>::to_vec).collect();
    c.bench_function("frechet distance 2000x56", |bench| bench.iter(|| black_box(frechet_distance(&a, &b).unwrap())));
}

fn lagged_correlation(c: &mut Criterion) {
    let (x, y) = (uniform(512, 7), uniform(512, 8));
    c.bench_function("tlcc 512 frames, 60 lags", |bench| bench.iter(|| black_box(tlcc(&x, &y, 60).unwrap())));
}

fn predictor_step(c: &mut Criterion) {
    let cfg = ExperimentConfig::profile(Profile::Desk);
    let lc = cfg.listener(53, 128, 4);
    let frames = lc.speaker.window_frames;
    let model = ListenerModel::new(lc.clone(), 0).unwrap();
    let motion: Vec<f32> = uniform(frames * 56, 9).into_iter().map(|v| v as f32).collect();
    let audio: Vec<f32> = uniform(frames * 128, 10).into_iter().map(|v| v as f32).collect();
    let tokens: Vec<usize> = (0..16).map(|i| i * 7 % cfg.codebook_size).collect();
    let (past, visible) = history(&tokens, 10, lc.tokens());
    c.bench_function("listener next-token distribution (desk)", |bench| {
        bench.iter(|| black_box(model.predict_dist(&motion, &audio, &past, &visible).unwrap()))
    });
}

criterion_group!(benches, matmul_backward, quantize_codebook, fd, lagged_correlation, predictor_step);
criterion_main!(benches);
