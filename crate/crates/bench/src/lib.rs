//! Seeded inputs shared by the benchmarks.

use gtp_core::attention::AttentionTensor;
use gtp_core::graph::{GraphKind, TokenGraph};
use gtp_core::linalg::{row_softmax_in_place, Matrix};
use gtp_core::rng::{stream, SplitMix64};

/// One layer's worth of reduction inputs: tokens ([CLS] first), softmax
/// attention maps, and the mixed graph over the image tokens.
pub struct LayerInputs {
    pub x: Matrix,
    pub attention: AttentionTensor,
    pub graph: TokenGraph,
}

pub fn layer_inputs(side: usize, c: usize, heads: usize, seed: u64) -> LayerInputs {
    let mut rng = SplitMix64::substream(seed, stream::BENCH);
    let n = side * side + 1;
    let x = random_matrix(&mut rng, n, c);
    let maps = (0..heads)
        .map(|_| {
            let mut m = random_matrix(&mut rng, n, n);
            row_softmax_in_place(&mut m);
            m
        })
        .collect();
    let attention = AttentionTensor::new(maps, vec![1.0; n]).expect("square maps");
    let image: Vec<usize> = (1..n).collect();
    let graph = TokenGraph::build(GraphKind::Mixed, &x.select_rows(&image), side, side, 8).expect("valid grid");
    LayerInputs { x, attention, graph }
}

pub fn random_matrix(rng: &mut SplitMix64, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
}
