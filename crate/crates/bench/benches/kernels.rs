use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use fswap_bench::{random_features, random_matrix, random_tensor};
use fswap_core::fats::block_matching_flow;
use fswap_core::{attend, bilinear_warp, fsai, rdft, FsaiConfig, Shape};

fn attention(c: &mut Criterion) {
    let f = random_features(1024, 8, 1);
    c.bench_function("attend_1024x8", |b| {
        b.iter(|| attend(black_box(&f), 8f64.sqrt().recip()))
    });
}

fn spectral(c: &mut Criterion) {
    let lane: Vec<f32> = random_matrix(1, 64, 2).data().to_vec();
    c.bench_function("rdft_64", |b| b.iter(|| rdft(black_box(&lane))));
    let odd: Vec<f32> = random_matrix(1, 63, 3).data().to_vec();
    c.bench_function("rdft_63_direct", |b| b.iter(|| rdft(black_box(&odd))));
    let (s, t) = (random_matrix(1024, 8, 4), random_matrix(1024, 8, 5));
    let cfg = FsaiConfig::default();
    c.bench_function("fsai_1024x8_channel", |b| {
        b.iter(|| fsai(black_box(&s), black_box(&t), &cfg))
    });
}

fn warping(c: &mut Criterion) {
    let x = random_tensor(Shape::new(1, 8, 32, 32).unwrap(), 6);
    let flow = random_tensor(Shape::new(1, 2, 32, 32).unwrap(), 7);
    c.bench_function("bilinear_warp_8x32x32", |b| {
        b.iter(|| bilinear_warp(black_box(&x), black_box(&flow)))
    });
    let a = random_tensor(Shape::new(1, 4, 32, 32).unwrap(), 8);
    let bb = random_tensor(Shape::new(1, 4, 32, 32).unwrap(), 9);
    c.bench_function("block_matching_32x32_r3_b5", |b| {
        b.iter(|| block_matching_flow(black_box(&a), black_box(&bb), 3, 5))
    });
}

criterion_group!(benches, attention, spectral, warping);
criterion_main!(benches);
