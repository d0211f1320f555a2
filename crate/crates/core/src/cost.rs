//! Closed-form MACs accounting.
//!
//! Backbone cost per block, with `N_l` tokens entering attention and
//! `N_{l+1} = N_l - P` entering the FFN (reduction sits between them):
//!
//! ```text
//! 4·N_l·C²  (qkv + output projections)
//! 2·N_l²·C  (QKᵀ and A·V)
//! 2·r·N_{l+1}·C²  (FFN with hidden ratio r = 4)
//! ```
//!
//! plus patch embedding and the classifier. Softmax, LayerNorm and
//! activations are not counted.

use serde::Serialize;

use crate::error::{GtpError, Result};
use crate::reduction::Strategy;
use crate::runtime::ModelConfig;

fn check_schedule(n: u64, l: u64, m: u64) -> Result<()> {
    if n == 0 || l == 0 {
        return Err(GtpError::Config("N and L must be positive".into()));
    }
    if l * m >= n {
        return Err(GtpError::Config(format!("infeasible schedule: L·M = {} >= N = {n}", l * m)));
    }
    Ok(())
}

/// Extra MACs of graph-based propagation over a whole forward:
/// `N²C + LHN + LMNC − ½(L²−L)HM − ½(L+L²)M²C`.
pub fn overhead_gtp(n: u64, l: u64, h: u64, c: u64, m: u64) -> Result<f64> {
    check_schedule(n, l, m)?;
    let (n, l, h, c, m) = (n as f64, l as f64, h as f64, c as f64, m as f64);
    Ok(n * n * c + l * h * n + l * m * n * c - 0.5 * (l * l - l) * h * m - 0.5 * (l + l * l) * m * m * c)
}

/// Extra MACs of bipartite matching, as the reference closed form:
/// `¼LN²C + ¼(L−L²)NMC + (L³/12 + L²/12 + L/8)M²C + LMC`.
///
/// The M²C coefficient does not follow from `Σ_l (¼N_l²C + MC)`; see
/// [`overhead_tome_summed`] for the direct sum.
pub fn overhead_tome(n: u64, l: u64, c: u64, m: u64) -> Result<f64> {
    check_schedule(n, l, m)?;
    let (n, l, c, m) = (n as f64, l as f64, c as f64, m as f64);
    Ok(0.25 * l * n * n * c
        + 0.25 * (l - l * l) * n * m * c
        + (l * l * l / 12.0 + l * l / 12.0 + l / 8.0) * m * m * c
        + l * m * c)
}

/// `Σ_{l=1..L} (¼N_l²C + MC)` with `N_l = N − (l−1)M`.
pub fn overhead_tome_summed(n: u64, l: u64, c: u64, m: u64) -> Result<f64> {
    check_schedule(n, l, m)?;
    Ok((1..=l)
        .map(|layer| {
            let nl = (n - (layer - 1) * m) as f64;
            0.25 * nl * nl * c as f64 + (m * c) as f64
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostParameters {
    /// Tokens entering the first block, [CLS] included.
    pub n: usize,
    pub n_img: usize,
    pub l: usize,
    pub h: usize,
    pub c: usize,
    /// Tokens removed per block.
    pub m: usize,
    pub mlp_ratio: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub parameters: CostParameters,
    pub patch_embed_macs: u64,
    pub backbone_per_layer: Vec<u64>,
    pub head_macs: u64,
    pub backbone_macs: u64,
    pub overhead_macs: f64,
    pub grand_total: f64,
}

impl CostReport {
    pub fn backbone_gmacs(&self) -> f64 {
        self.backbone_macs as f64 / 1e9
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub const CSV_HEADER: [&'static str; 9] =
        ["preset", "p", "n", "l", "h", "c", "backbone_gmacs", "overhead_mmacs", "total_gmacs"];

    pub fn csv_record(&self, preset: &str) -> Vec<String> {
        let p = &self.parameters;
        vec![
            preset.to_string(),
            p.m.to_string(),
            p.n.to_string(),
            p.l.to_string(),
            p.h.to_string(),
            p.c.to_string(),
            format!("{:.4}", self.backbone_gmacs()),
            format!("{:.4}", self.overhead_macs / 1e6),
            format!("{:.4}", self.grand_total / 1e9),
        ]
    }
}

/// Analytical cost of one forward under `cfg`'s token schedule.
pub fn backbone_macs(cfg: &ModelConfig) -> CostReport {
    let c = cfg.embed_dim as u64;
    let p = cfg.reduction.p_per_layer as u64;
    let ratio = cfg.mlp_ratio as u64;
    let mut n_l = cfg.total_tokens() as u64;
    let mut per_layer = Vec::with_capacity(cfg.depth);
    for _ in 0..cfg.depth {
        let n_next = n_l - p;
        per_layer.push(4 * n_l * c * c + 2 * n_l * n_l * c + 2 * ratio * n_next * c * c);
        n_l = n_next;
    }
    let patch_embed_macs = (cfg.img_tokens * cfg.patch_dim()) as u64 * c;
    let head_macs = c * cfg.num_classes as u64;
    let backbone = patch_embed_macs + per_layer.iter().sum::<u64>() + head_macs;

    let (n, l, h) = (cfg.total_tokens() as u64, cfg.depth as u64, cfg.heads as u64);
    let overhead = match (p, cfg.reduction.strategy) {
        (0, _) => 0.0,
        (_, Strategy::CosSim) => overhead_tome(n, l, c, p).unwrap_or(f64::NAN),
        _ => overhead_gtp(n, l, h, c, p).unwrap_or(f64::NAN),
    };
    CostReport {
        parameters: CostParameters {
            n: cfg.total_tokens(),
            n_img: cfg.img_tokens,
            l: cfg.depth,
            h: cfg.heads,
            c: cfg.embed_dim,
            m: cfg.reduction.p_per_layer,
            mlp_ratio: cfg.mlp_ratio,
        },
        patch_embed_macs,
        backbone_per_layer: per_layer,
        head_macs,
        backbone_macs: backbone,
        overhead_macs: overhead,
        grand_total: backbone as f64 + overhead,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_removal_reduces_to_construction_and_scoring() {
        let (n, l, h, c) = (197u64, 12, 6, 384);
        assert_eq!(overhead_gtp(n, l, h, c, 0).unwrap(), (n * n * c + l * h * n) as f64);
        assert_eq!(overhead_tome(n, l, c, 0).unwrap(), 0.25 * (l * n * n * c) as f64);
    }

    #[test]
    fn infeasible_schedules() {
        assert!(overhead_gtp(96, 12, 6, 384, 8).is_err());
        assert!(overhead_tome(96, 12, 384, 8).is_err());
        assert!(overhead_gtp(0, 12, 6, 384, 0).is_err());
    }

    #[test]
    fn deit_b_reference_points() {
        let gtp = overhead_gtp(197, 12, 12, 768, 8).unwrap() / 1e6;
        let tome = overhead_tome(197, 12, 768, 8).unwrap() / 1e6;
        assert!((gtp - 40.5).abs() < 0.05, "{gtp}");
        assert!((tome - 57.3).abs() < 0.05, "{tome}");
    }

    #[test]
    fn vanilla_deit_s() {
        let r = backbone_macs(&ModelConfig::deit_s());
        assert_eq!(r.backbone_per_layer.len(), 12);
        assert!((r.backbone_gmacs() - 4.6).abs() / 4.6 < 0.03);
        assert_eq!(r.overhead_macs, 0.0);
        assert_eq!(r.grand_total, r.backbone_macs as f64);
    }

    #[test]
    fn decreasing_in_p() {
        for cfg in [ModelConfig::deit_s(), ModelConfig::deit_b(), ModelConfig::vit_medium_gap()] {
            let mut last = u64::MAX;
            for p in 0..=15 {
                let c = cfg.clone().with_p(p);
                if c.validate().is_err() {
                    break;
                }
                let now = backbone_macs(&c).backbone_macs;
                assert!(now < last);
                last = now;
            }
        }
    }

    #[test]
    fn vit_medium_gap_baseline() {
        // reference 10.6 GMACs at P = 0 and 7.0 at P = 14
        let base = backbone_macs(&ModelConfig::vit_medium_gap()).backbone_gmacs();
        assert!((base - 10.6).abs() / 10.6 < 0.03, "{base}");
        let p14 = backbone_macs(&ModelConfig::vit_medium_gap().with_p(14)).backbone_gmacs();
        assert!((p14 - 7.0).abs() / 7.0 < 0.03, "{p14}");
    }

    #[test]
    fn report_serialization_is_stable() {
        let r = backbone_macs(&ModelConfig::tiny().with_p(2));
        assert_eq!(r.to_json(), r.clone().to_json());
        assert!(r.to_json().find("\"parameters\"").unwrap() < r.to_json().find("\"grand_total\"").unwrap());
        assert_eq!(r.csv_record("tiny").len(), CostReport::CSV_HEADER.len());
    }
}
