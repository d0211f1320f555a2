use gtp_core::graph::GraphKind;
use gtp_core::reduction::Strategy;
use gtp_core::runtime::{
    forward, generate_fixture, ForwardInput, ForwardOutput, Image, Model, ModelConfig, Pooling, WeightStore,
};

fn run(cfg: &ModelConfig, seed: u64) -> ForwardOutput {
    let (store, image) = generate_fixture(seed, cfg);
    let model = Model::from_store(cfg, &store).unwrap();
    forward(&model, ForwardInput::Image(&image)).unwrap()
}

// Plain nested-loop ViT, written against the weight store directly.
mod naive {
    use super::*;

    fn t(store: &WeightStore, name: &str) -> Vec<f64> {
        store.get(name).unwrap().data.iter().map(|&v| f64::from(v)).collect()
    }

    fn linear(x: &[Vec<f64>], w: &[f64], b: &[f64]) -> Vec<Vec<f64>> {
        let out = b.len();
        x.iter()
            .map(|row| {
                (0..out)
                    .map(|j| b[j] + row.iter().enumerate().map(|(k, v)| v * w[k * out + j]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    fn ln(x: &[Vec<f64>], g: &[f64], b: &[f64]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                let n = row.len() as f64;
                let mu = row.iter().sum::<f64>() / n;
                let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
                row.iter().zip(g).zip(b).map(|((v, g), b)| (v - mu) / (var + 1e-6).sqrt() * g + b).collect()
            })
            .collect()
    }

    pub fn logits(cfg: &ModelConfig, store: &WeightStore, img: &Image) -> Vec<f64> {
        let c = cfg.embed_dim;
        let ps = cfg.patch_size;
        let side = cfg.grid_side();
        let mut patches = Vec::new();
        for gy in 0..side {
            for gx in 0..side {
                let mut v = Vec::new();
                for ch in 0..img.chans {
                    for py in 0..ps {
                        for px in 0..ps {
                            v.push(img.at(ch, gy * ps + py, gx * ps + px));
                        }
                    }
                }
                patches.push(v);
            }
        }
        let mut x = linear(&patches, &t(store, "embed.weight"), &t(store, "embed.bias"));
        if cfg.has_cls {
            x.insert(0, t(store, "cls.token"));
        }
        let pos = t(store, "pos.embed");
        for (i, row) in x.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += pos[i * c + j];
            }
        }
        let n = x.len();
        let (heads, dk) = (cfg.heads, cfg.head_dim());
        for l in 0..cfg.depth {
            let w = |s: &str| t(store, &format!("block{l}.{s}"));
            let h = ln(&x, &w("ln1.weight"), &w("ln1.bias"));
            let qkv = linear(&h, &w("qkv.weight"), &w("qkv.bias"));
            let mut ctx = vec![vec![0.0; c]; n];
            for hd in 0..heads {
                for i in 0..n {
                    let logit: Vec<f64> = (0..n)
                        .map(|j| {
                            (0..dk).map(|d| qkv[i][hd * dk + d] * qkv[j][c + hd * dk + d]).sum::<f64>()
                                / (dk as f64).sqrt()
                        })
                        .collect();
                    let mx = logit.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = logit.iter().map(|v| (v - mx).exp()).collect();
                    let z: f64 = e.iter().sum();
                    for d in 0..dk {
                        ctx[i][hd * dk + d] = (0..n).map(|j| e[j] / z * qkv[j][2 * c + hd * dk + d]).sum();
                    }
                }
            }
            let a = linear(&ctx, &w("out.weight"), &w("out.bias"));
            for (r, d) in x.iter_mut().zip(&a) {
                r.iter_mut().zip(d).for_each(|(v, d)| *v += d);
            }
            let h2 = ln(&x, &w("ln2.weight"), &w("ln2.bias"));
            let mut f = linear(&h2, &w("fc1.weight"), &w("fc1.bias"));
            for v in f.iter_mut().flatten() {
                *v = 0.5 * *v * (1.0 + libm::erf(*v / std::f64::consts::SQRT_2));
            }
            let f = linear(&f, &w("fc2.weight"), &w("fc2.bias"));
            for (r, d) in x.iter_mut().zip(&f) {
                r.iter_mut().zip(d).for_each(|(v, d)| *v += d);
            }
        }
        let x = ln(&x, &t(store, "norm.weight"), &t(store, "norm.bias"));
        let pooled = if cfg.has_cls {
            x[0].clone()
        } else {
            (0..c).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect()
        };
        linear(&[pooled], &t(store, "head.weight"), &t(store, "head.bias")).remove(0)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn no_reduction_matches_naive_vit() {
    for (cfg, seed) in [(ModelConfig::tiny(), 1), (ModelConfig::tiny(), 42)] {
        let cfg = cfg.with_p(0);
        let (store, image) = generate_fixture(seed, &cfg);
        let got = run(&cfg, seed).logits;
        let want = naive::logits(&cfg, &store, &image);
        assert!(max_abs_diff(&got, &want) < 1e-9, "seed {seed}");
    }
}

#[test]
fn no_reduction_without_cls_matches_naive_mean_pool() {
    let mut cfg = ModelConfig::tiny().with_p(0);
    cfg.has_cls = false;
    for pooling in [Pooling::Mean, Pooling::SizeWeighted] {
        cfg.pooling = pooling;
        let (store, image) = generate_fixture(5, &cfg);
        let got = run(&cfg, 5).logits;
        assert!(max_abs_diff(&got, &naive::logits(&cfg, &store, &image)) < 1e-9);
    }
}

#[test]
fn deit_s_schedule_and_single_graph_build() {
    let cfg = ModelConfig::deit_s().with_p(8);
    let out = run(&cfg, 42);
    let live: Vec<usize> = out.diagnostics.layers.iter().map(|d| d.live_tokens).collect();
    let want: Vec<usize> = (1..=12).map(|l| 196 - 8 * l).collect();
    assert_eq!(live, want);
    assert_eq!(*live.last().unwrap(), 100);
    assert_eq!(out.diagnostics.graph_builds, 1);
    assert_eq!(out.final_tokens.tokens.rows(), 101);
    assert!(out.diagnostics.warnings.is_empty());
    for d in &out.diagnostics.layers {
        assert_eq!(d.propagated_ids.len(), 8);
        assert!(d.kept_ids.iter().all(|k| !d.propagated_ids.contains(k)));
    }
}

#[test]
fn cls_survives_and_sizes_stay_positive() {
    let out = run(&ModelConfig::tiny().with_p(3), 9);
    let fm = &out.final_tokens;
    assert!(fm.has_cls);
    assert_eq!(fm.sizes[0], 1.0);
    assert!(fm.sizes.iter().all(|&s| s >= 1.0));
    assert_eq!(fm.live_image_tokens(), 16 - 9);
}

#[test]
fn gap_model_runs_without_cls() {
    let mut cfg = ModelConfig::tiny().with_p(4);
    cfg.has_cls = false;
    let out = run(&cfg, 3);
    assert!(!out.final_tokens.has_cls);
    assert_eq!(out.final_tokens.tokens.rows(), 4);
    assert!(out.logits.iter().all(|v| v.is_finite()));
}

#[test]
fn every_strategy_follows_the_schedule() {
    for s in Strategy::ALL {
        let mut cfg = ModelConfig::tiny().with_p(2);
        cfg.reduction.strategy = s;
        let out = run(&cfg, 11);
        let live: Vec<usize> = out.diagnostics.layers.iter().map(|d| d.live_tokens).collect();
        assert_eq!(live, vec![14, 12, 10], "{s}");
        assert_eq!(out.diagnostics.graph_builds, usize::from(s != Strategy::CosSim));
    }
}

#[test]
fn forward_is_deterministic() {
    let mut cfg = ModelConfig::tiny().with_p(2);
    cfg.reduction.strategy = Strategy::Random;
    cfg.reduction.seed = 17;
    let a = run(&cfg, 8);
    let b = run(&cfg, 8);
    assert_eq!(a.logits, b.logits);
    assert_eq!(a.diagnostics, b.diagnostics);
}

#[test]
fn no_graph_equals_zero_alpha() {
    let mut none = ModelConfig::tiny().with_p(3);
    none.reduction.graph_kind = GraphKind::None;
    none.reduction.alpha = 0.7;
    let mut zero = ModelConfig::tiny().with_p(3);
    zero.reduction.alpha = 0.0;
    for seed in 0..5 {
        let a = run(&none, seed).logits;
        let b = run(&zero, seed).logits;
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn propagation_changes_survivors() {
    let base = ModelConfig::tiny().with_p(3);
    let mut zero = base.clone();
    zero.reduction.alpha = 0.0;
    let a = run(&base, 4);
    let b = run(&zero, 4);
    assert_ne!(a.logits, b.logits);
    assert!(b.final_tokens.sizes.iter().all(|&s| s == 1.0));
    assert!(a.final_tokens.sizes.iter().skip(1).any(|&s| s > 1.0));
}

#[test]
fn sparsified_attention_keeps_budget() {
    let mut cfg = ModelConfig::tiny().with_p(2);
    cfg.reduction.theta = 0.5;
    let out = run(&cfg, 2);
    let mut n = 17;
    for d in &out.diagnostics.layers {
        let budget = (0.5 * (n * n) as f64).ceil() as usize;
        assert!(d.attention_nonzeros.iter().all(|&z| z == budget), "{:?} vs {budget}", d.attention_nonzeros);
        n -= 2;
    }
}

#[test]
fn instrumented_macs_match_backbone_formula() {
    for p in [0, 2, 4] {
        let cfg = ModelConfig::tiny().with_p(p);
        let out = run(&cfg, 1);
        let report = gtp_core::cost::backbone_macs(&cfg);
        assert_eq!(out.diagnostics.macs.backbone, report.backbone_macs, "p = {p}");
        assert_eq!(out.diagnostics.macs.overhead > 0, p > 0);
    }
}

fn hex_logits(v: &[f64]) -> String {
    v.iter().map(|x| format!("{:016x}\n", x.to_bits())).collect()
}

#[test]
fn golden_tiny_logits() {
    let cfg = ModelConfig::tiny().with_p(2);
    let got = hex_logits(&run(&cfg, 42).logits);
    let want = include_str!("data/tiny_p2_seed42.logits.hex");
    assert_eq!(got, want);
}

#[test]
fn golden_deit_s_weights() {
    let (store, _) = generate_fixture(42, &ModelConfig::deit_s());
    assert_eq!(store.sha256(), include_str!("data/deit_s_seed42.sha256").trim());
}
