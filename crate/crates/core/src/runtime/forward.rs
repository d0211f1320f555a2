//! The full forward pass with token reduction after every attention block.

use serde::Serialize;

use super::model::{ffn_forward, layer_norm, Model};
use super::weights::Image;
use crate::attention::{mhsa_forward_with, update_sizes, MhsaOptions};
use crate::error::{GtpError, Result};
use crate::graph::TokenGraph;
use crate::linalg::macs::{self, MacCount};
use crate::linalg::{cosine_similarity, IndexSet, Matrix};
use crate::reduction::{
    is_pruning_only, merge_tokens, propagate, select_tokens_baseline, ReductionPlan, Strategy,
};
use crate::rng::{stream, SplitMix64};

/// Live tokens with their original grid ids and sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub tokens: Matrix,
    /// Original grid index of each image row (the [CLS] row has none).
    pub token_ids: Vec<usize>,
    pub sizes: Vec<f64>,
    pub has_cls: bool,
}

impl FeatureMap {
    pub fn new(tokens: Matrix, has_cls: bool) -> Self {
        let n = tokens.rows();
        let image = n - usize::from(has_cls);
        Self { tokens, token_ids: (0..image).collect(), sizes: vec![1.0; n], has_cls }
    }

    pub fn cls_index(&self) -> Option<usize> {
        self.has_cls.then_some(0)
    }

    pub fn image_rows(&self) -> std::ops::Range<usize> {
        usize::from(self.has_cls)..self.tokens.rows()
    }

    pub fn live_image_tokens(&self) -> usize {
        self.token_ids.len()
    }

    pub fn image_tokens(&self) -> Matrix {
        self.tokens.select_rows(&self.image_rows().collect::<Vec<_>>())
    }

    /// Maps live row positions (image rows only) to original token ids.
    fn ids_of(&self, positions: &IndexSet) -> IndexSet {
        let offset = usize::from(self.has_cls);
        IndexSet::from_unsorted(
            positions
                .iter()
                .filter(|&p| Some(p) != self.cls_index())
                .map(|p| self.token_ids[p - offset])
                .collect(),
        )
    }
}

/// Mean pairwise cosine similarity over image tokens ([CLS] excluded).
pub fn oversmoothing_metric(x: &FeatureMap) -> Result<f64> {
    let rows: Vec<usize> = x.image_rows().collect();
    if rows.len() < 2 {
        return Err(GtpError::Degenerate(format!("{} image tokens, need at least 2", rows.len())));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            sum += cosine_similarity(x.tokens.row(i), x.tokens.row(j))?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerDiagnostics {
    pub layer: usize,
    /// Image tokens alive after this block.
    pub live_tokens: usize,
    pub kept_ids: Vec<usize>,
    pub propagated_ids: Vec<usize>,
    /// Keep-priority of each image token entering this block's reduction.
    pub scores: Vec<f64>,
    pub oversmoothing: Option<f64>,
    pub attention_nonzeros: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub graph_builds: usize,
    pub initial_oversmoothing: Option<f64>,
    pub layers: Vec<LayerDiagnostics>,
    pub macs: MacCount,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub diagnostics: Diagnostics,
    pub final_tokens: FeatureMap,
}

pub enum ForwardInput<'a> {
    Image(&'a Image),
    /// Rows entering the first block ([CLS] first when the model has one).
    Embedded(Matrix),
}

pub fn forward(model: &Model, input: ForwardInput<'_>) -> Result<ForwardOutput> {
    let (out, macs) = macs::measure(|| run(model, input));
    let mut out = out?;
    out.diagnostics.macs = macs;
    Ok(out)
}

fn run(model: &Model, input: ForwardInput<'_>) -> Result<ForwardOutput> {
    let cfg = &model.cfg;
    let red = &cfg.reduction;
    let tokens = match input {
        ForwardInput::Image(img) => model.embed(img)?,
        ForwardInput::Embedded(m) => {
            if m.shape() != (cfg.total_tokens(), cfg.embed_dim) {
                return Err(GtpError::shape(
                    "forward",
                    format!("embedded input {:?} vs ({}, {})", m.shape(), cfg.total_tokens(), cfg.embed_dim),
                ));
            }
            m
        }
    };
    let mut fm = FeatureMap::new(tokens, cfg.has_cls);
    let p = red.p_per_layer;
    let mut warnings = Vec::new();

    let mut graph_builds = 0;
    let mut graph = if p > 0 && red.strategy != Strategy::CosSim {
        let (gh, gw) = (cfg.grid_side(), cfg.grid_side());
        graph_builds += 1;
        Some(TokenGraph::build(red.graph_kind, &fm.image_tokens(), gh, gw, red.m_neighbors)?)
    } else {
        None
    };
    let pruning_only = is_pruning_only(red.graph_kind, red.alpha);
    let opts = MhsaOptions {
        theta: red.theta,
        renormalize: red.renormalize_after_sparsify,
        keep_dense: p > 0 && !red.score_after_sparsify && red.theta < 1.0,
    };
    let initial_oversmoothing = oversmoothing_metric(&fm).ok();
    let selection_root = SplitMix64::substream(red.seed, stream::SELECTION).next_u64();

    let mut layers = Vec::with_capacity(cfg.depth);
    for (l, w) in model.blocks.iter().enumerate() {
        let h = layer_norm(&fm.tokens, &w.ln1_scale, &w.ln1_shift);
        let attn = mhsa_forward_with(&h, w, cfg.heads, &fm.sizes, opts)?;
        fm.tokens.add_assign(&attn.output)?;
        let attention_nonzeros = attn.attention.nonzeros_per_head();
        if attention_nonzeros.contains(&0) {
            warnings.push(format!("layer {l}: attention map fully zeroed by sparsification"));
        }

        let mut diag = LayerDiagnostics {
            layer: l,
            live_tokens: fm.live_image_tokens(),
            kept_ids: fm.token_ids.clone(),
            propagated_ids: Vec::new(),
            scores: Vec::new(),
            oversmoothing: None,
            attention_nonzeros,
        };

        if p > 0 {
            let scoring = attn.dense_attention.as_ref().unwrap_or(&attn.attention);
            let seed = SplitMix64::substream(selection_root, l as u64).next_u64();
            let plan = select_tokens_baseline(
                red.strategy,
                scoring,
                &fm.tokens,
                p,
                fm.cls_index(),
                red.aggregator,
                seed,
            )?;
            diag.scores = fm.image_rows().map(|r| plan.scores[r]).collect();
            let (next, propagated_ids) = apply_plan(fm, &plan, graph.as_mut(), red.alpha, pruning_only)?;
            fm = next;
            diag.kept_ids = fm.token_ids.clone();
            diag.propagated_ids = propagated_ids;
            diag.live_tokens = fm.live_image_tokens();
        }

        let h2 = layer_norm(&fm.tokens, &w.ln2_scale, &w.ln2_shift);
        fm.tokens.add_assign(&ffn_forward(&h2, w)?)?;
        if !fm.tokens.is_finite() {
            return Err(GtpError::NonFinite("transformer block"));
        }
        diag.oversmoothing = oversmoothing_metric(&fm).ok();
        layers.push(diag);
    }

    let image_sizes: Vec<f64> = fm.image_rows().map(|r| fm.sizes[r]).collect();
    let logits = if cfg.has_cls {
        model.classify(&fm.tokens, &fm.sizes)?
    } else {
        model.classify(&fm.tokens, &image_sizes)?
    };
    Ok(ForwardOutput {
        logits,
        diagnostics: Diagnostics {
            graph_builds,
            initial_oversmoothing,
            layers,
            macs: MacCount::default(),
            warnings,
        },
        final_tokens: fm,
    })
}

/// Shrinks the feature map according to `plan`, propagating or merging the
/// removed tokens, and keeps the graph's live set in step.
fn apply_plan(
    fm: FeatureMap,
    plan: &ReductionPlan,
    graph: Option<&mut TokenGraph>,
    alpha: f64,
    pruning_only: bool,
) -> Result<(FeatureMap, Vec<usize>)> {
    let kept_ids = fm.ids_of(&plan.kept);
    let prop_ids = fm.ids_of(&plan.propagated);
    let cls = fm.cls_index();

    let (tokens, sizes) = if plan.strategy == Strategy::CosSim {
        merge_tokens(&fm.tokens, &fm.sizes, plan)?
    } else {
        let graph = graph.ok_or_else(|| GtpError::Config("propagation without a token graph".into()))?;
        let out = if pruning_only {
            let sizes = plan.kept.iter().map(|r| fm.sizes[r]).collect();
            (fm.tokens.select_rows(plan.kept.as_slice()), sizes)
        } else {
            let view = graph.extract_propagation_view(&kept_ids, &prop_ids)?;
            let tokens = propagate(&fm.tokens, plan, &view, alpha)?;
            let s_kept: Vec<f64> = plan.kept.iter().filter(|&r| Some(r) != cls).map(|r| fm.sizes[r]).collect();
            let s_prop: Vec<f64> = plan.propagated.iter().map(|r| fm.sizes[r]).collect();
            let mut sizes: Vec<f64> = cls.map(|c| fm.sizes[c]).into_iter().collect();
            sizes.extend(update_sizes(&s_kept, &s_prop, &view, alpha)?);
            (tokens, sizes)
        };
        graph.retain(kept_ids.clone())?;
        out
    };
    let next = FeatureMap { tokens, token_ids: kept_ids.into_vec(), sizes, has_cls: fm.has_cls };
    Ok((next, prop_ids.into_vec()))
}
