use std::hint::black_box;

use bagsplat::grouping::{knn_regularization_3d, NeighborDivergence};
use bagsplat::relevancy::rank_with_embedding;
use bagsplat::render::{render, RenderOptions};
use bagsplat::{synthetic, IdentityClassifier, SelectionRule};
use bagsplat_bench::{random_bank, random_scene};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn render_tiles(c: &mut Criterion) {
    let scene = random_scene(20_000, 8, 256, 1);
    let clf = IdentityClassifier::one_hot(8, 1.0, 0.0);
    let cam = &scene.cameras()[0];
    let mut group = c.benchmark_group("render_256px_20k");
    group.sample_size(10);
    for tile_size in [8, 16, 32, 64] {
        let opts = RenderOptions {
            tile_size,
            ..RenderOptions::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(tile_size), &opts, |b, opts| {
            b.iter(|| render(black_box(&scene), cam, &clf, opts).unwrap())
        });
    }
    group.finish();
}

fn rank(c: &mut Criterion) {
    let mut group = c.benchmark_group("rank");
    for objects in [100, 1_000] {
        let (bank, query) = random_bank(objects, 50, 512, 2);
        group.bench_with_input(BenchmarkId::new("512d_50views", objects), &bank, |b, bank| {
            b.iter(|| rank_with_embedding(bank, "q", black_box(&query), 5, SelectionRule::Top1).unwrap())
        });
    }
    group.finish();
}

fn knn(c: &mut Criterion) {
    let scene = random_scene(5_000, 8, 32, 3);
    let clf = IdentityClassifier::one_hot(8, 1.0, 0.0);
    c.bench_function("knn_kl_5k_sample1k", |b| {
        b.iter(|| knn_regularization_3d(&scene, &clf, 5, 1_000, 7, NeighborDivergence::SymmetricKl).unwrap())
    });
}

fn end_to_end(c: &mut Criterion) {
    c.bench_function("synthetic_benchmark_build", |b| b.iter(synthetic::benchmark));
}

criterion_group!(benches, render_tiles, rank, knn, end_to_end);
criterion_main!(benches);
