use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use v2x_bench::{scene, student};
use v2x_core::flops::{counted_flops, FlopSpec};
use v2x_core::losses::{alignment_loss, kd_grad, kd_loss, similarity_matrix, AlignConfig, DistillConfig};
use v2x_core::model::concat_views;
use v2x_core::numerics::{SplitMix64, Tensor2D};
use v2x_core::v2xlink::{decode_frame, downsample, encode_frame, upsample, FrameMeta};
use v2x_core::RngSeed;

fn noise(rows: usize, cols: usize, seed: u64) -> Tensor2D {
    let mut rng = SplitMix64::new(RngSeed(seed));
    Tensor2D::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

fn link(c: &mut Criterion) {
    let s = scene();
    let mut g = c.benchmark_group("link");
    for scale in [1.0, 0.5, 0.1] {
        g.bench_with_input(BenchmarkId::new("downsample", scale), &scale, |b, &sc| {
            b.iter(|| downsample(black_box(&s.infra), sc).unwrap())
        });
    }
    let small = downsample(&s.infra, 0.5).unwrap();
    g.bench_function("upsample_0.5", |b| {
        b.iter(|| upsample(black_box(&small), s.infra.height(), s.infra.width()).unwrap())
    });
    let meta = FrameMeta::new(7, 1_000, 1.0);
    let bytes = encode_frame(&s.infra, &meta).unwrap();
    g.bench_function("encode_frame", |b| b.iter(|| encode_frame(black_box(&s.infra), &meta).unwrap()));
    g.bench_function("decode_frame", |b| b.iter(|| decode_frame(black_box(&bytes)).unwrap()));
    g.finish();
}

fn losses(c: &mut Criterion) {
    let mut g = c.benchmark_group("losses");
    let (z, h) = (noise(4, 64, 1), noise(4, 64, 2));
    g.bench_function("alignment_k4", |b| {
        b.iter(|| alignment_loss(&similarity_matrix(black_box(&z), black_box(&h), AlignConfig::default()).unwrap()))
    });
    let (s, t) = (noise(18, 131, 3), noise(18, 131, 4));
    let cfg = DistillConfig::default();
    g.bench_function("kd_loss_18x131", |b| b.iter(|| kd_loss(black_box(&s), black_box(&t), cfg).unwrap()));
    g.bench_function("kd_grad_18x131", |b| b.iter(|| kd_grad(black_box(&s), black_box(&t), cfg).unwrap()));
    g.finish();
}

fn model(c: &mut Criterion) {
    let s = scene();
    let (model, tok) = student();
    let image = concat_views(&s.vehicle, &s.infra).unwrap();
    let prompt = tok.encode(&s.prompt.full_text(), model.config().max_prompt_len).unwrap();
    let mut g = c.benchmark_group("student");
    g.sample_size(10);
    g.bench_function("encode_image", |b| b.iter(|| model.encode_image(black_box(&image)).unwrap()));
    g.bench_function("greedy_decode", |b| b.iter(|| model.greedy_decode(black_box(&image), &prompt).unwrap()));
    g.finish();
}

fn flops(c: &mut Criterion) {
    let spec = FlopSpec::new(16, 8, 64, 4, None).unwrap();
    c.bench_function("counted_flops_16_8_64", |b| b.iter(|| counted_flops(black_box(&spec), RngSeed(0))));
}

criterion_group!(benches, link, losses, model, flops);
criterion_main!(benches);
