//! Token scoring, kept/propagated partitioning, graph propagation, and the
//! baseline selection strategies used for comparison.
//!
//! Positions in a [`ReductionPlan`] are row indices into the current live
//! feature map (the [CLS] row included when present). The graph view passed
//! to [`propagate`] has one row per kept *image* token, in kept order, and one
//! column per propagated token.

use serde::{Deserialize, Serialize};

use crate::attention::AttentionTensor;
use crate::error::{GtpError, Result};
use crate::graph::GraphKind;
use crate::linalg::macs::{self, MacKind};
use crate::linalg::{argsort_desc, dot, norm, IndexSet, Matrix, SparseMatrix};
use crate::rng::SplitMix64;

/// How per-head values are fused into one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    #[default]
    Max,
    Mean,
}

impl Aggregator {
    pub fn fuse(self, values: impl Iterator<Item = f64>) -> f64 {
        match self {
            Aggregator::Max => values.fold(f64::NEG_INFINITY, f64::max),
            Aggregator::Mean => {
                let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                sum / n as f64
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Γ×Ψ: regeneration difficulty times broadcasting ability.
    #[default]
    MixedAttn,
    DiagAttn,
    BroadAttn,
    ClsAttn,
    /// Bipartite soft matching with size-weighted merging.
    CosSim,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::MixedAttn,
        Strategy::DiagAttn,
        Strategy::BroadAttn,
        Strategy::ClsAttn,
        Strategy::CosSim,
        Strategy::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::MixedAttn => "mixed-attn",
            Strategy::DiagAttn => "diag-attn",
            Strategy::BroadAttn => "broad-attn",
            Strategy::ClsAttn => "cls-attn",
            Strategy::CosSim => "cos-sim",
            Strategy::Random => "random",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = GtpError;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().replace('-', "") == key)
            .ok_or_else(|| GtpError::Config(format!("unknown strategy '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReductionConfig {
    /// Tokens removed per block.
    pub p_per_layer: usize,
    pub alpha: f64,
    pub graph_kind: GraphKind,
    pub theta: f64,
    pub m_neighbors: usize,
    pub aggregator: Aggregator,
    pub strategy: Strategy,
    /// Score tokens on the sparsified maps (true) or the dense softmax maps.
    pub score_after_sparsify: bool,
    pub renormalize_after_sparsify: bool,
    /// Seed for the `Random` strategy. Layer `l` draws from substream `l` of
    /// the seed's selection stream.
    pub seed: u64,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self {
            p_per_layer: 0,
            alpha: 0.2,
            graph_kind: GraphKind::Mixed,
            theta: 1.0,
            m_neighbors: 8,
            aggregator: Aggregator::Max,
            strategy: Strategy::MixedAttn,
            score_after_sparsify: true,
            renormalize_after_sparsify: false,
            seed: 0,
        }
    }
}

impl ReductionConfig {
    /// Checks the knobs that do not depend on the model.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(GtpError::Config(format!("alpha {} must be finite and >= 0", self.alpha)));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(GtpError::Config(format!("theta {} outside (0, 1]", self.theta)));
        }
        if self.m_neighbors == 0 && matches!(self.graph_kind, GraphKind::Semantic | GraphKind::Mixed) {
            return Err(GtpError::Config("semantic graphs need m_neighbors >= 1".into()));
        }
        Ok(())
    }
}

/// Partition of the live rows into kept and propagated positions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionPlan {
    pub kept: IndexSet,
    pub propagated: IndexSet,
    /// Keep-priority per live row; [CLS] is `+inf`.
    pub scores: Vec<f64>,
    pub strategy: Strategy,
    /// `(source, destination)` row pairs for merge-style strategies.
    pub merges: Vec<(usize, usize)>,
}

/// Γ: the attention diagonal fused over heads.
pub fn score_regeneration(attn: &AttentionTensor, aggregator: Aggregator) -> Vec<f64> {
    macs::record(MacKind::Overhead, (attn.heads * attn.n) as u64);
    (0..attn.n)
        .map(|i| aggregator.fuse(attn.maps.iter().map(|m| m.get(i, i))))
        .collect()
}

/// Ψ: per-head off-diagonal column sums, fused over heads.
pub fn score_broadcasting(attn: &AttentionTensor, aggregator: Aggregator) -> Vec<f64> {
    let n = attn.n;
    let per_head: Vec<Vec<f64>> = attn
        .maps
        .iter()
        .map(|m| {
            let mut col = vec![0.0; n];
            for j in 0..n {
                for (i, v) in m.row(j).iter().enumerate() {
                    if i != j {
                        col[i] += v;
                    }
                }
            }
            col
        })
        .collect();
    macs::record(MacKind::Overhead, (attn.heads * n * n) as u64);
    (0..n).map(|i| aggregator.fuse(per_head.iter().map(|c| c[i]))).collect()
}

/// Keeps the `n - p` scoreable rows with the highest score; the [CLS] row
/// is never scored and always kept.
pub fn select_by_scores(scores: &[f64], p: usize, cls_index: Option<usize>, strategy: Strategy) -> Result<ReductionPlan> {
    let n = scores.len();
    if let Some(c) = cls_index {
        if c >= n {
            return Err(GtpError::Argument(format!("cls index {c} outside {n} tokens")));
        }
    }
    let scoreable: Vec<usize> = (0..n).filter(|&i| Some(i) != cls_index).collect();
    if p >= scoreable.len() && p > 0 {
        return Err(GtpError::Config(format!(
            "cannot propagate {p} of {} scoreable tokens",
            scoreable.len()
        )));
    }
    if let Some(i) = scoreable.iter().find(|&&i| !scores[i].is_finite()) {
        return Err(GtpError::Argument(format!("non-finite score at token {i}")));
    }
    let sub: Vec<f64> = scoreable.iter().map(|&i| scores[i]).collect();
    let order = argsort_desc(&sub);
    let split = scoreable.len() - p;
    let mut kept: Vec<usize> = order[..split].iter().map(|&k| scoreable[k]).collect();
    kept.extend(cls_index);
    let propagated: Vec<usize> = order[split..].iter().map(|&k| scoreable[k]).collect();

    let mut all_scores = scores.to_vec();
    if let Some(c) = cls_index {
        all_scores[c] = f64::INFINITY;
    }
    Ok(ReductionPlan {
        kept: IndexSet::from_unsorted(kept),
        propagated: IndexSet::from_unsorted(propagated),
        scores: all_scores,
        strategy,
        merges: Vec::new(),
    })
}

/// Keeps the tokens with the largest Γ·Ψ.
pub fn select_tokens(gamma: &[f64], psi: &[f64], p: usize, cls_index: Option<usize>) -> Result<ReductionPlan> {
    if gamma.len() != psi.len() {
        return Err(GtpError::shape("select_tokens", format!("Γ {} vs Ψ {}", gamma.len(), psi.len())));
    }
    let products: Vec<f64> = gamma.iter().zip(psi).map(|(g, s)| g * s).collect();
    select_by_scores(&products, p, cls_index, Strategy::MixedAttn)
}

/// `X^s = X^k + α · Â^p · X^p`, rows in kept order. The [CLS] row is
/// passed through untouched.
pub fn propagate(x: &Matrix, plan: &ReductionPlan, a_hat_p: &SparseMatrix, alpha: f64) -> Result<Matrix> {
    propagate_rows(x, &plan.kept, &plan.propagated, cls_in(plan, x.rows()), a_hat_p, alpha)
}

fn cls_in(plan: &ReductionPlan, n: usize) -> Option<usize> {
    plan.kept.iter().find(|&i| i < n && plan.scores.get(i) == Some(&f64::INFINITY))
}

pub(crate) fn propagate_rows(
    x: &Matrix,
    kept: &IndexSet,
    propagated: &IndexSet,
    cls_index: Option<usize>,
    a_hat_p: &SparseMatrix,
    alpha: f64,
) -> Result<Matrix> {
    kept.check_bound(x.rows())?;
    propagated.check_bound(x.rows())?;
    let image_kept = kept.len() - usize::from(cls_index.is_some_and(|c| kept.contains(c)));
    if a_hat_p.rows() != image_kept || a_hat_p.cols() != propagated.len() {
        return Err(GtpError::shape(
            "propagate",
            format!(
                "Â^p is {}x{}, plan has {image_kept} kept image tokens and {} propagated",
                a_hat_p.rows(),
                a_hat_p.cols(),
                propagated.len()
            ),
        ));
    }
    let mut out = x.select_rows(kept.as_slice());
    if alpha == 0.0 || propagated.is_empty() || a_hat_p.nnz() == 0 {
        return Ok(out);
    }
    let spread = a_hat_p.mul_dense(&x.select_rows(propagated.as_slice()))?;
    let mut graph_row = 0;
    for (row, pos) in kept.iter().enumerate() {
        if Some(pos) == cls_index {
            continue;
        }
        for (o, s) in out.row_mut(row).iter_mut().zip(spread.row(graph_row)) {
            *o += alpha * s;
        }
        graph_row += 1;
    }
    macs::record(MacKind::Overhead, (image_kept * x.cols()) as u64);
    Ok(out)
}

/// Selection under one of the comparison strategies. `x` supplies token
/// features for `CosSim`; `seed` drives `Random`.
pub fn select_tokens_baseline(
    strategy: Strategy,
    attn: &AttentionTensor,
    x: &Matrix,
    p: usize,
    cls_index: Option<usize>,
    aggregator: Aggregator,
    seed: u64,
) -> Result<ReductionPlan> {
    let n = attn.n;
    if x.rows() != n {
        return Err(GtpError::shape("select_tokens_baseline", format!("{} rows vs {n} tokens", x.rows())));
    }
    let plan = match strategy {
        Strategy::MixedAttn => {
            let gamma = score_regeneration(attn, aggregator);
            let psi = score_broadcasting(attn, aggregator);
            select_tokens(&gamma, &psi, p, cls_index)?
        }
        Strategy::DiagAttn => select_by_scores(&score_regeneration(attn, aggregator), p, cls_index, strategy)?,
        Strategy::BroadAttn => select_by_scores(&score_broadcasting(attn, aggregator), p, cls_index, strategy)?,
        Strategy::ClsAttn => {
            let cls = cls_index.ok_or_else(|| GtpError::Strategy("cls-attn needs a [CLS] token".into()))?;
            let scores: Vec<f64> = (0..n)
                .map(|i| aggregator.fuse(attn.maps.iter().map(|m| m.get(cls, i))))
                .collect();
            select_by_scores(&scores, p, cls_index, strategy)?
        }
        Strategy::Random => {
            let mut rng = SplitMix64::new(seed);
            let scores: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
            select_by_scores(&scores, p, cls_index, strategy)?
        }
        Strategy::CosSim => bipartite_match(x, p, cls_index)?,
    };
    Ok(plan)
}

/// Alternating split of the scoreable rows into sources (even) and
/// destinations (odd); each source finds its most similar destination and
/// the `p` best-matched sources are merged away.
pub fn bipartite_match(x: &Matrix, p: usize, cls_index: Option<usize>) -> Result<ReductionPlan> {
    let n = x.rows();
    let scoreable: Vec<usize> = (0..n).filter(|&i| Some(i) != cls_index).collect();
    let sources: Vec<usize> = scoreable.iter().copied().step_by(2).collect();
    let dests: Vec<usize> = scoreable.iter().copied().skip(1).step_by(2).collect();
    if p > sources.len() || (p > 0 && dests.is_empty()) {
        return Err(GtpError::Config(format!(
            "bipartite matching can merge at most {} of {} tokens, asked for {p}",
            sources.len().min(if dests.is_empty() { 0 } else { sources.len() }),
            scoreable.len()
        )));
    }
    let norms: Vec<f64> = (0..n).map(|i| norm(x.row(i))).collect();
    if let Some(i) = scoreable.iter().find(|&&i| norms[i] == 0.0) {
        return Err(GtpError::Degenerate(format!("token {i} has zero norm")));
    }

    let mut best_sim = Vec::with_capacity(sources.len());
    let mut best_dst = Vec::with_capacity(sources.len());
    for &a in &sources {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for &b in &dests {
            let s = dot(x.row(a), x.row(b)) / (norms[a] * norms[b]);
            if s > best.0 {
                best = (s, b);
            }
        }
        best_sim.push(best.0);
        best_dst.push(best.1);
    }
    macs::record(MacKind::Overhead, (sources.len() * dests.len() * x.cols()) as u64);

    let order = argsort_desc(&best_sim);
    let mut merges: Vec<(usize, usize)> = order[..p].iter().map(|&k| (sources[k], best_dst[k])).collect();
    merges.sort_unstable();
    let propagated = IndexSet::from_unsorted(merges.iter().map(|m| m.0).collect());
    let kept = IndexSet::from_unsorted((0..n).filter(|&i| !propagated.contains(i)).collect());

    let mut scores = vec![f64::INFINITY; n];
    for (k, &a) in sources.iter().enumerate() {
        scores[a] = -best_sim[k];
    }
    Ok(ReductionPlan { kept, propagated, scores, strategy: Strategy::CosSim, merges })
}

/// Applies a merge plan: each destination becomes the size-weighted mean of
/// itself and its sources, and absorbs their sizes.
pub fn merge_tokens(x: &Matrix, sizes: &[f64], plan: &ReductionPlan) -> Result<(Matrix, Vec<f64>)> {
    if sizes.len() != x.rows() {
        return Err(GtpError::shape("merge_tokens", format!("{} sizes for {} rows", sizes.len(), x.rows())));
    }
    let c = x.cols();
    let mut acc = x.clone();
    for i in 0..x.rows() {
        let s = sizes[i];
        acc.row_mut(i).iter_mut().for_each(|v| *v *= s);
    }
    let mut mass = sizes.to_vec();
    for &(src, dst) in &plan.merges {
        if !plan.kept.contains(dst) || !plan.propagated.contains(src) {
            return Err(GtpError::Partition(format!("merge {src} -> {dst} does not match the plan")));
        }
        let moved: Vec<f64> = acc.row(src).to_vec();
        for (d, m) in acc.row_mut(dst).iter_mut().zip(moved) {
            *d += m;
        }
        mass[dst] += mass[src];
    }
    macs::record(MacKind::Overhead, (plan.merges.len() * c) as u64);
    let mut out = acc.select_rows(plan.kept.as_slice());
    let new_sizes: Vec<f64> = plan.kept.iter().map(|i| mass[i]).collect();
    for (r, s) in new_sizes.iter().enumerate() {
        out.row_mut(r).iter_mut().for_each(|v| *v /= s);
    }
    Ok((out, new_sizes))
}

/// True when the graph kind turns propagation into plain pruning.
pub fn is_pruning_only(kind: GraphKind, alpha: f64) -> bool {
    kind == GraphKind::None || alpha == 0.0
}
