use criterion::{black_box, criterion_group, criterion_main, Criterion};
use gtp_bench::random_matrix;
use gtp_core::graph::{build_semantic, GraphKind, TokenGraph};
use gtp_core::linalg::{kth_largest, matmul};
use gtp_core::rng::SplitMix64;
use gtp_core::runtime::{forward, generate_fixture, ForwardInput, Model, ModelConfig};

fn kernels(c: &mut Criterion) {
    let mut rng = SplitMix64::new(3);
    let a = random_matrix(&mut rng, 197, 384);
    let w = random_matrix(&mut rng, 384, 1152);
    c.bench_function("matmul_197x384x1152", |b| b.iter(|| black_box(matmul(&a, &w).unwrap())));

    let values: Vec<f64> = (0..197 * 197).map(|_| rng.next_f64()).collect();
    c.bench_function("kth_largest_38809", |b| b.iter(|| black_box(kth_largest(&values, 19_405).unwrap())));

    let x0 = random_matrix(&mut rng, 196, 384);
    c.bench_function("semantic_graph_196", |b| b.iter(|| black_box(build_semantic(&x0, 8).unwrap())));
    c.bench_function("mixed_graph_196", |b| {
        b.iter(|| black_box(TokenGraph::build(GraphKind::Mixed, &x0, 14, 14, 8).unwrap()))
    });

    let cfg = ModelConfig::tiny().with_p(2);
    let (store, image) = generate_fixture(0, &cfg);
    let model = Model::from_store(&cfg, &store).unwrap();
    c.bench_function("forward_tiny_p2", |b| b.iter(|| black_box(forward(&model, ForwardInput::Image(&image)).unwrap())));
}

criterion_group!(benches, kernels);
criterion_main!(benches);
