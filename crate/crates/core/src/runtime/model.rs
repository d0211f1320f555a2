//! Dense model parameters and the block-level building blocks.

use super::config::ModelConfig;
use super::weights::{Image, Tensor, WeightStore};
use crate::attention::BlockWeights;
use crate::error::{GtpError, Result};
use crate::linalg::{matmul, Matrix};

pub const LN_EPS: f64 = 1e-6;

/// Model parameters converted to `f64` and checked against the config.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub embed_w: Matrix,
    pub embed_b: Vec<f64>,
    pub cls_token: Option<Vec<f64>>,
    pub pos_embed: Matrix,
    pub blocks: Vec<BlockWeights>,
    pub norm_scale: Vec<f64>,
    pub norm_shift: Vec<f64>,
    pub head_w: Matrix,
    pub head_b: Vec<f64>,
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data.iter().map(|&v| f64::from(v)).collect()
}

fn matrix(store: &WeightStore, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
    let t = store.require(name)?;
    if t.dims != [rows, cols] {
        return Err(GtpError::Schema(format!("{name} has dims {:?}, expected [{rows}, {cols}]", t.dims)));
    }
    Matrix::new(rows, cols, to_f64(t)).map_err(|_| GtpError::Schema(format!("{name} holds non-finite values")))
}

fn vector(store: &WeightStore, name: &str, len: usize) -> Result<Vec<f64>> {
    let t = store.require(name)?;
    if t.dims != [len] {
        return Err(GtpError::Schema(format!("{name} has dims {:?}, expected [{len}]", t.dims)));
    }
    let v = to_f64(t);
    if v.iter().any(|x| !x.is_finite()) {
        return Err(GtpError::Schema(format!("{name} holds non-finite values")));
    }
    Ok(v)
}

impl Model {
    pub fn from_store(cfg: &ModelConfig, store: &WeightStore) -> Result<Self> {
        cfg.validate()?;
        let (c, hidden) = (cfg.embed_dim, cfg.hidden_dim());
        let mut blocks = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            let n = |s: &str| format!("block{l}.{s}");
            blocks.push(BlockWeights {
                qkv_w: matrix(store, &n("qkv.weight"), c, 3 * c)?,
                qkv_b: vector(store, &n("qkv.bias"), 3 * c)?,
                out_w: matrix(store, &n("out.weight"), c, c)?,
                out_b: vector(store, &n("out.bias"), c)?,
                ln1_scale: vector(store, &n("ln1.weight"), c)?,
                ln1_shift: vector(store, &n("ln1.bias"), c)?,
                ln2_scale: vector(store, &n("ln2.weight"), c)?,
                ln2_shift: vector(store, &n("ln2.bias"), c)?,
                fc1_w: matrix(store, &n("fc1.weight"), c, hidden)?,
                fc1_b: vector(store, &n("fc1.bias"), hidden)?,
                fc2_w: matrix(store, &n("fc2.weight"), hidden, c)?,
                fc2_b: vector(store, &n("fc2.bias"), c)?,
            });
        }
        Ok(Self {
            cfg: cfg.clone(),
            embed_w: matrix(store, "embed.weight", cfg.patch_dim(), c)?,
            embed_b: vector(store, "embed.bias", c)?,
            cls_token: if cfg.has_cls { Some(vector(store, "cls.token", c)?) } else { None },
            pos_embed: matrix(store, "pos.embed", cfg.total_tokens(), c)?,
            blocks,
            norm_scale: vector(store, "norm.weight", c)?,
            norm_shift: vector(store, "norm.bias", c)?,
            head_w: matrix(store, "head.weight", c, cfg.num_classes)?,
            head_b: vector(store, "head.bias", cfg.num_classes)?,
        })
    }

    /// Rows entering the first block: [CLS] (if any) then image tokens in
    /// row-major grid order, with positional embedding added.
    pub fn embed(&self, image: &Image) -> Result<Matrix> {
        let cfg = &self.cfg;
        if (image.chans, image.height, image.width) != (cfg.in_chans, cfg.image_size, cfg.image_size) {
            return Err(GtpError::shape(
                "Model::embed",
                format!(
                    "image {}x{}x{} vs expected {}x{}x{}",
                    image.chans, image.height, image.width, cfg.in_chans, cfg.image_size, cfg.image_size
                ),
            ));
        }
        let patches = patchify(image, cfg.patch_size);
        let mut tokens = matmul(&patches, &self.embed_w)?;
        tokens.add_row_vector(&self.embed_b)?;
        let mut x = match &self.cls_token {
            Some(cls) => {
                let mut data = cls.clone();
                data.extend_from_slice(tokens.data());
                Matrix::new(cfg.total_tokens(), cfg.embed_dim, data)?
            }
            None => tokens,
        };
        x.add_assign(&self.pos_embed)?;
        Ok(x)
    }

    /// Final LayerNorm, pooling, and classifier.
    pub fn classify(&self, x: &Matrix, sizes: &[f64]) -> Result<Vec<f64>> {
        let normed = layer_norm(x, &self.norm_scale, &self.norm_shift);
        let pooled = if self.cfg.has_cls {
            normed.row(0).to_vec()
        } else {
            pool(&normed, sizes, self.cfg.pooling == super::config::Pooling::SizeWeighted)
        };
        let mut logits = matmul(&Matrix::new(1, pooled.len(), pooled)?, &self.head_w)?;
        logits.add_row_vector(&self.head_b)?;
        if !logits.is_finite() {
            return Err(GtpError::NonFinite("classifier"));
        }
        Ok(logits.into_data())
    }
}

fn pool(x: &Matrix, sizes: &[f64], weighted: bool) -> Vec<f64> {
    let mut out = vec![0.0; x.cols()];
    let mut total = 0.0;
    for i in 0..x.rows() {
        let w = if weighted { sizes[i] } else { 1.0 };
        total += w;
        for (o, v) in out.iter_mut().zip(x.row(i)) {
            *o += w * v;
        }
    }
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// Flattens non-overlapping patches to rows, each laid out `[chan][py][px]`.
pub fn patchify(image: &Image, patch: usize) -> Matrix {
    let (gh, gw) = (image.height / patch, image.width / patch);
    let dim = image.chans * patch * patch;
    let mut data = Vec::with_capacity(gh * gw * dim);
    for gy in 0..gh {
        for gx in 0..gw {
            for c in 0..image.chans {
                for py in 0..patch {
                    for px in 0..patch {
                        data.push(image.at(c, gy * patch + py, gx * patch + px));
                    }
                }
            }
        }
    }
    Matrix::new(gh * gw, dim, data).expect("patch grid is consistent")
}

pub fn layer_norm(x: &Matrix, scale: &[f64], shift: &[f64]) -> Matrix {
    let c = x.cols() as f64;
    let mut out = x.clone();
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / c;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for ((v, g), b) in row.iter_mut().zip(scale).zip(shift) {
            *v = (*v - mean) * inv * g + b;
        }
    }
    out
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// `GELU(x·W1 + b1)·W2 + b2`.
pub fn ffn_forward(x: &Matrix, w: &BlockWeights) -> Result<Matrix> {
    let mut h = matmul(x, &w.fc1_w)?;
    h.add_row_vector(&w.fc1_b)?;
    h.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
    let mut out = matmul(&h, &w.fc2_w)?;
    out.add_row_vector(&w.fc2_b)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::weights::generate_fixture;

    #[test]
    fn layer_norm_standardizes() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let y = layer_norm(&x, &[1.0; 4], &[0.0; 4]);
        let mean: f64 = y.row(0).iter().sum::<f64>() / 4.0;
        let var: f64 = y.row(0).iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-15);
        assert!((var - 1.25 / (1.25 + LN_EPS)).abs() < 1e-12);
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((gelu(-1.0) + 0.158_655_253_931_457_05).abs() < 1e-15);
    }

    #[test]
    fn patch_layout() {
        let img = Image::new(2, 4, 4, (0..32).map(f64::from).collect()).unwrap();
        let p = patchify(&img, 2);
        assert_eq!(p.shape(), (4, 8));
        // patch (0,1): channel 0 rows 0..2 cols 2..4, then channel 1
        assert_eq!(p.row(1), &[2.0, 3.0, 6.0, 7.0, 18.0, 19.0, 22.0, 23.0]);
    }

    #[test]
    fn missing_or_misshapen_tensors() {
        let cfg = ModelConfig::tiny();
        let (mut store, _) = generate_fixture(1, &cfg);
        assert!(Model::from_store(&cfg, &store).is_ok());
        store.remove("block1.fc1.bias");
        match Model::from_store(&cfg, &store) {
            Err(GtpError::Schema(msg)) => assert!(msg.contains("block1.fc1.bias")),
            other => panic!("expected schema error, got {other:?}"),
        }
        let (mut store, _) = generate_fixture(1, &cfg);
        store.insert("head.bias", Tensor::new(vec![3], vec![0.0; 3]).unwrap());
        assert!(matches!(Model::from_store(&cfg, &store), Err(GtpError::Schema(_))));
    }
}
