//! Wall-clock comparison of one layer's token reduction: score, select and
//! propagate against bipartite matching and merging, at matched sizes.

use std::hint::black_box;
use std::time::Instant;

use serde::Serialize;

use crate::attention::{update_sizes, AttentionTensor};
use crate::cost::{overhead_gtp, overhead_tome};
use crate::error::{GtpError, Result};
use crate::graph::{GraphKind, TokenGraph};
use crate::linalg::{row_softmax_in_place, IndexSet, Matrix};
use crate::reduction::{merge_tokens, propagate, select_tokens_baseline, Aggregator, Strategy};
use crate::rng::{stream, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverheadCase {
    /// Live tokens entering the layer, [CLS] included.
    pub n: usize,
    pub c: usize,
    pub heads: usize,
    pub p: usize,
    pub has_cls: bool,
    pub m_neighbors: usize,
    /// Depth used for the whole-model closed forms.
    pub depth: usize,
}

impl OverheadCase {
    /// ViT-B/8 at 224px: 784 patches plus [CLS].
    pub fn vit_b8() -> Self {
        Self { n: 785, c: 768, heads: 12, p: 20, has_cls: true, m_neighbors: 8, depth: 12 }
    }

    pub fn deit_s() -> Self {
        Self { n: 197, c: 384, heads: 6, p: 8, has_cls: true, m_neighbors: 8, depth: 12 }
    }

    fn grid_side(&self) -> Result<usize> {
        let img = self.n - usize::from(self.has_cls);
        let side = (img as f64).sqrt().round() as usize;
        if side * side != img {
            return Err(GtpError::Argument(format!("{img} image tokens do not form a square grid")));
        }
        Ok(side)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingStats {
    pub repeats: usize,
    pub median_ns: f64,
    /// Median absolute deviation from the median.
    pub mad_ns: f64,
    pub min_ns: f64,
    pub max_ns: f64,
}

impl TimingStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        let median = median(samples);
        let dev: Vec<f64> = samples.iter().map(|s| (s - median).abs()).collect();
        Self {
            repeats: samples.len(),
            median_ns: median,
            mad_ns: median_or_zero(&dev),
            min_ns: samples.iter().copied().fold(f64::INFINITY, f64::min),
            max_ns: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

fn median_or_zero(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        median(v)
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let mid = s.len() / 2;
    if s.len().is_multiple_of(2) {
        (s[mid - 1] + s[mid]) / 2.0
    } else {
        s[mid]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadReport {
    pub case: OverheadCase,
    pub gtp: TimingStats,
    pub tome: TimingStats,
    /// `H·N + P·(N−P)·C` for this layer.
    pub analytic_gtp_layer: f64,
    /// `¼N²C + P·C` for this layer.
    pub analytic_tome_layer: f64,
    pub analytic_gtp_total: Option<f64>,
    pub analytic_tome_total: Option<f64>,
}

impl OverheadReport {
    pub fn gtp_not_slower(&self) -> bool {
        self.gtp.median_ns <= self.tome.median_ns
    }
}

struct Fixture {
    x: Matrix,
    sizes: Vec<f64>,
    attn: AttentionTensor,
    graph: TokenGraph,
    cls: Option<usize>,
}

fn fixture(case: &OverheadCase, seed: u64) -> Result<Fixture> {
    let mut rng = SplitMix64::substream(seed, stream::BENCH);
    let x = Matrix::from_fn(case.n, case.c, |_, _| rng.uniform(-1.0, 1.0));
    let maps = (0..case.heads)
        .map(|_| {
            let mut m = Matrix::from_fn(case.n, case.n, |_, _| rng.uniform(-3.0, 3.0));
            row_softmax_in_place(&mut m);
            m
        })
        .collect();
    let sizes = vec![1.0; case.n];
    let attn = AttentionTensor::new(maps, sizes.clone())?;
    let side = case.grid_side()?;
    let cls = case.has_cls.then_some(0);
    let image: Vec<usize> = (usize::from(case.has_cls)..case.n).collect();
    let graph = TokenGraph::build(GraphKind::Mixed, &x.select_rows(&image), side, side, case.m_neighbors)?;
    Ok(Fixture { x, sizes, attn, graph, cls })
}

fn gtp_layer(f: &Fixture, p: usize) -> Result<(Matrix, Vec<f64>)> {
    let plan = select_tokens_baseline(Strategy::MixedAttn, &f.attn, &f.x, p, f.cls, Aggregator::Max, 0)?;
    let offset = usize::from(f.cls.is_some());
    let ids = |s: &IndexSet| IndexSet::from_unsorted(s.iter().filter(|&i| Some(i) != f.cls).map(|i| i - offset).collect());
    let view = f.graph.extract_propagation_view(&ids(&plan.kept), &ids(&plan.propagated))?;
    let x = propagate(&f.x, &plan, &view, 0.2)?;
    let s_kept: Vec<f64> = plan.kept.iter().filter(|&i| Some(i) != f.cls).map(|i| f.sizes[i]).collect();
    let s_prop: Vec<f64> = plan.propagated.iter().map(|i| f.sizes[i]).collect();
    Ok((x, update_sizes(&s_kept, &s_prop, &view, 0.2)?))
}

fn tome_layer(f: &Fixture, p: usize) -> Result<(Matrix, Vec<f64>)> {
    let plan = select_tokens_baseline(Strategy::CosSim, &f.attn, &f.x, p, f.cls, Aggregator::Max, 0)?;
    merge_tokens(&f.x, &f.sizes, &plan)
}

fn time_once(f: impl FnOnce() -> Result<(Matrix, Vec<f64>)>) -> Result<f64> {
    let start = Instant::now();
    black_box(f()?);
    Ok(start.elapsed().as_nanos() as f64)
}

/// Times both reductions `repeats` times, interleaved, after one warm-up
/// each. With `p == 0` neither reduction runs, as in the forward pass.
pub fn bench_overhead(case: &OverheadCase, repeats: usize, seed: u64) -> Result<OverheadReport> {
    if repeats < 10 {
        return Err(GtpError::Argument(format!("need at least 10 repeats, got {repeats}")));
    }
    let scoreable = case.n - usize::from(case.has_cls);
    if case.heads == 0 || case.c == 0 || !case.c.is_multiple_of(case.heads) {
        return Err(GtpError::Config(format!("C = {} not divisible into {} heads", case.c, case.heads)));
    }
    if 2 * case.p > scoreable {
        return Err(GtpError::Config(format!("P = {} exceeds half of {scoreable} tokens", case.p)));
    }
    let f = fixture(case, seed)?;
    let p = case.p;
    let run_gtp = || if p == 0 { Ok((Matrix::zeros(0, 0), Vec::new())) } else { gtp_layer(&f, p) };
    let run_tome = || if p == 0 { Ok((Matrix::zeros(0, 0), Vec::new())) } else { tome_layer(&f, p) };
    black_box(run_gtp()?);
    black_box(run_tome()?);
    let mut gtp = Vec::with_capacity(repeats);
    let mut tome = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        gtp.push(time_once(run_gtp)?);
        tome.push(time_once(run_tome)?);
    }

    let (n, c, h, pf) = (case.n as f64, case.c as f64, case.heads as f64, p as f64);
    let (nu, l, mu) = (case.n as u64, case.depth as u64, p as u64);
    Ok(OverheadReport {
        case: *case,
        gtp: TimingStats::from_samples(&gtp),
        tome: TimingStats::from_samples(&tome),
        analytic_gtp_layer: if p == 0 { 0.0 } else { h * n + pf * (n - pf) * c },
        analytic_tome_layer: if p == 0 { 0.0 } else { 0.25 * n * n * c + pf * c },
        analytic_gtp_total: overhead_gtp(nu, l, case.heads as u64, case.c as u64, mu).ok(),
        analytic_tome_total: overhead_tome(nu, l, case.c as u64, mu).ok(),
    })
}
