use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lrcnn_core::lowrank::scheme2_init_svd;
use lrcnn_core::network::random_bank;
use lrcnn_core::optim::{scheme1_filter_recon, Scheme1ReconConfig};
use lrcnn_core::tensor::{conv2d_valid, FeatureMap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn conv2_shapes(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bank = random_bank::<f32>(&mut rng, 128, 48, 9, 9);
    let x = FeatureMap::from_fn(48, 16, 16, |ch, u, v| ((ch * 7 + u * 3 + v) % 11) as f32 / 5.0 - 1.0);
    let mut g = c.benchmark_group("conv2_48x16x16");
    g.bench_function("direct", |b| b.iter(|| conv2d_valid(black_box(&x), &bank).unwrap()));
    for k in [8, 16, 31, 64] {
        let layer = scheme2_init_svd(&bank, k).unwrap().layer;
        g.bench_with_input(BenchmarkId::new("scheme2", k), &layer, |b, l| b.iter(|| l.forward(black_box(&x)).unwrap()));
    }
    let cfg = Scheme1ReconConfig { max_iters: 5, ..Default::default() };
    for m in [6, 12] {
        let layer = scheme1_filter_recon(&bank, m, &cfg).unwrap().layer;
        g.bench_with_input(BenchmarkId::new("scheme1", m), &layer, |b, l| b.iter(|| l.forward(black_box(&x)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, conv2_shapes);
criterion_main!(benches);
