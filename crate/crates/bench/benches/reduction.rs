use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use gtp_bench::layer_inputs;
use gtp_core::linalg::IndexSet;
use gtp_core::reduction::{
    bipartite_match, merge_tokens, propagate, score_broadcasting, score_regeneration, select_tokens, Aggregator,
};

fn ids(s: &IndexSet) -> IndexSet {
    IndexSet::from_unsorted(s.iter().filter(|&i| i != 0).map(|i| i - 1).collect())
}

fn reduction(c: &mut Criterion) {
    let mut g = c.benchmark_group("layer_reduction");
    g.sample_size(20);
    // DeiT-S and ViT-B/8 shaped layers
    for (side, dim, heads, p) in [(14, 384, 6, 8), (28, 768, 12, 20)] {
        let inputs = layer_inputs(side, dim, heads, 1);
        let n = side * side + 1;
        g.bench_with_input(BenchmarkId::new("propagation", n), &inputs, |b, l| {
            b.iter(|| {
                let gamma = score_regeneration(&l.attention, Aggregator::Max);
                let psi = score_broadcasting(&l.attention, Aggregator::Max);
                let plan = select_tokens(&gamma, &psi, p, Some(0)).unwrap();
                let view = l.graph.extract_propagation_view(&ids(&plan.kept), &ids(&plan.propagated)).unwrap();
                black_box(propagate(&l.x, &plan, &view, 0.2).unwrap())
            })
        });
        let sizes = vec![1.0; n];
        g.bench_with_input(BenchmarkId::new("matching", n), &inputs, |b, l| {
            b.iter(|| {
                let plan = bipartite_match(&l.x, p, Some(0)).unwrap();
                black_box(merge_tokens(&l.x, &sizes, &plan).unwrap())
            })
        });
    }
    g.finish();
}

criterion_group!(benches, reduction);
criterion_main!(benches);
