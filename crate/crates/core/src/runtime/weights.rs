//! Named-tensor weight store and its "GTPW" binary format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "GTPW" | u32 version = 1 | u32 tensor count
//! per tensor: u32 name length | UTF-8 name | u32 ndim | u32 dims[ndim] | f32 payload
//! ```
//!
//! Tensors are written in name order, so equal stores serialize to equal bytes.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use crate::error::{GtpError, Result};
use crate::rng::{stream, SplitMix64};

pub const MAGIC: [u8; 4] = *b"GTPW";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let want: usize = dims.iter().product();
        if want != data.len() {
            return Err(GtpError::shape("Tensor::new", format!("dims {dims:?} need {want} values, got {}", data.len())));
        }
        Ok(Self { dims, data })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| GtpError::Schema(format!("missing tensor '{name}'")))
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.tensors.values().map(|t| 4 * t.data.len() + 8 + 4 * t.dims.len()).sum();
        let mut out = Vec::with_capacity(12 + payload);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < 4 || bytes[..4] != MAGIC {
            return Err(GtpError::Format { offset: 0, reason: "bad magic, expected \"GTPW\"".into() });
        }
        r.pos = 4;
        let version_at = r.pos;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.error_at(version_at, format!("unsupported version {version}")));
        }
        let count = r.u32("tensor count")?;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name_at = r.pos;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| GtpError::Format { offset: name_at as u64, reason: "tensor name is not UTF-8".into() })?
                .to_string();
            let ndim = r.u32("ndim")? as usize;
            let dims_at = r.pos;
            let mut dims = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                dims.push(r.u32("dimension")? as usize);
            }
            let count = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4).map(|_| n))
                .ok_or_else(|| r.error_at(dims_at, format!("dimensions {dims:?} overflow")))?;
            if count * 4 > bytes.len() - r.pos {
                return Err(r.error_at(
                    dims_at,
                    format!("dimensions {dims:?} need {} payload bytes, {} remain", count * 4, bytes.len() - r.pos),
                ));
            }
            let raw = r.take(count * 4, "payload")?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            if store.tensors.contains_key(&name) {
                return Err(r.error_at(name_at, format!("duplicate tensor '{name}'")));
            }
            store.tensors.insert(name, Tensor { dims, data });
        }
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Hex SHA-256 of the serialized store.
    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn error_at(&self, offset: usize, reason: String) -> GtpError {
        GtpError::Format { offset: offset as u64, reason }
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(self.error_at(self.pos, format!("truncated while reading {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Uniform,
    Ones,
    Zeros,
}

/// Every tensor a model needs, in generation order.
pub fn schema(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (c, hidden) = (cfg.embed_dim, cfg.hidden_dim());
    let mut out = vec![
        ("embed.weight".to_string(), vec![cfg.patch_dim(), c], Init::Uniform),
        ("embed.bias".to_string(), vec![c], Init::Uniform),
    ];
    if cfg.has_cls {
        out.push(("cls.token".to_string(), vec![c], Init::Uniform));
    }
    out.push(("pos.embed".to_string(), vec![cfg.total_tokens(), c], Init::Uniform));
    for l in 0..cfg.depth {
        let p = |s: &str| format!("block{l}.{s}");
        out.extend([
            (p("ln1.weight"), vec![c], Init::Ones),
            (p("ln1.bias"), vec![c], Init::Zeros),
            (p("qkv.weight"), vec![c, 3 * c], Init::Uniform),
            (p("qkv.bias"), vec![3 * c], Init::Uniform),
            (p("out.weight"), vec![c, c], Init::Uniform),
            (p("out.bias"), vec![c], Init::Uniform),
            (p("ln2.weight"), vec![c], Init::Ones),
            (p("ln2.bias"), vec![c], Init::Zeros),
            (p("fc1.weight"), vec![c, hidden], Init::Uniform),
            (p("fc1.bias"), vec![hidden], Init::Uniform),
            (p("fc2.weight"), vec![hidden, c], Init::Uniform),
            (p("fc2.bias"), vec![c], Init::Uniform),
        ]);
    }
    out.extend([
        ("norm.weight".to_string(), vec![c], Init::Ones),
        ("norm.bias".to_string(), vec![c], Init::Zeros),
        ("head.weight".to_string(), vec![c, cfg.num_classes], Init::Uniform),
        ("head.bias".to_string(), vec![cfg.num_classes], Init::Uniform),
    ]);
    out
}

/// Pixel tensor, channel-major `[chans][height][width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub chans: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(chans: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != chans * height * width {
            return Err(GtpError::shape("Image::new", format!("{chans}x{height}x{width} vs {} values", data.len())));
        }
        Ok(Self { chans, height, width, data })
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Deterministic weights and a synthetic image for `cfg`.
///
/// Weights are uniform in [-0.05, 0.05] (LayerNorm scales 1, shifts 0);
/// pixels are uniform in [0, 1]. Each draws from its own SplitMix64
/// substream of `seed`.
pub fn generate_fixture(seed: u64, cfg: &ModelConfig) -> (WeightStore, Image) {
    (generate_weights(seed, cfg), generate_image(seed, cfg))
}

pub fn generate_weights(seed: u64, cfg: &ModelConfig) -> WeightStore {
    let mut rng = SplitMix64::substream(seed, stream::WEIGHTS);
    let mut store = WeightStore::new();
    for (name, dims, init) in schema(cfg) {
        let len: usize = dims.iter().product();
        let data = match init {
            Init::Uniform => (0..len).map(|_| rng.uniform(-0.05, 0.05) as f32).collect(),
            Init::Ones => vec![1.0; len],
            Init::Zeros => vec![0.0; len],
        };
        store.insert(name, Tensor { dims, data });
    }
    store
}

pub fn generate_image(seed: u64, cfg: &ModelConfig) -> Image {
    let mut rng = SplitMix64::substream(seed, stream::IMAGE);
    let len = cfg.in_chans * cfg.image_size * cfg.image_size;
    let data = (0..len).map(|_| rng.next_f64()).collect();
    Image { chans: cfg.in_chans, height: cfg.image_size, width: cfg.image_size, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_store() -> WeightStore {
        let mut s = WeightStore::new();
        s.insert("a", Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 0.0, 3.25, -0.125]).unwrap());
        s
    }

    #[test]
    fn documented_layout() {
        let bytes = small_store().to_bytes();
        let mut want = Vec::new();
        want.extend_from_slice(b"GTPW");
        want.extend_from_slice(&[1, 0, 0, 0]); // version
        want.extend_from_slice(&[1, 0, 0, 0]); // count
        want.extend_from_slice(&[1, 0, 0, 0]); // name length
        want.push(b'a');
        want.extend_from_slice(&[2, 0, 0, 0]); // ndim
        want.extend_from_slice(&[2, 0, 0, 0, 3, 0, 0, 0]);
        for hex in ["0000803f", "000000c0", "0000003f", "00000000", "00005040", "000000be"] {
            want.extend((0..4).map(|i| u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).unwrap()));
        }
        assert_eq!(bytes, want);
        assert_eq!(bytes.len(), 12 + 4 + 1 + 4 + 8 + 24);
    }

    #[test]
    fn format_errors_carry_offsets() {
        let good = small_store().to_bytes();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(WeightStore::from_bytes(&bad), Err(GtpError::Format { offset: 0, .. })));

        let mut ver = good.clone();
        ver[4] = 2;
        assert!(matches!(WeightStore::from_bytes(&ver), Err(GtpError::Format { offset: 4, .. })));

        let truncated = &good[..good.len() - 3];
        assert!(matches!(WeightStore::from_bytes(truncated), Err(GtpError::Format { offset: 21, .. })));

        let mut huge = good.clone();
        huge[21..25].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[25..29].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(WeightStore::from_bytes(&huge), Err(GtpError::Format { offset: 21, .. })));

        let mut trailing = good;
        trailing.push(0);
        assert!(matches!(WeightStore::from_bytes(&trailing), Err(GtpError::Format { offset: 53, .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.gtpw");
        let store = generate_weights(3, &ModelConfig::tiny());
        store.save(&path).unwrap();
        assert_eq!(WeightStore::load(&path).unwrap(), store);
    }

    #[test]
    fn fixture_determinism() {
        let cfg = ModelConfig::tiny();
        let (w1, i1) = generate_fixture(1, &cfg);
        let (w1b, i1b) = generate_fixture(1, &cfg);
        let (w2, _) = generate_fixture(2, &cfg);
        assert_eq!(w1.to_bytes(), w1b.to_bytes());
        assert_eq!(i1, i1b);
        assert_ne!(w1.get("embed.weight"), w2.get("embed.weight"));
        for (name, t) in w1.iter() {
            if name.contains("ln") || name.starts_with("norm") {
                let want = if name.ends_with("weight") { 1.0 } else { 0.0 };
                assert!(t.data.iter().all(|&v| v == want), "{name}");
            } else {
                assert!(t.data.iter().all(|v| v.abs() <= 0.05), "{name}");
            }
        }
        assert!(i1.data.iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn schema_covers_every_block() {
        let cfg = ModelConfig::deit_s();
        let names: Vec<String> = schema(&cfg).into_iter().map(|s| s.0).collect();
        assert_eq!(names.len(), 2 + 1 + 1 + 12 * 12 + 4);
        assert!(names.contains(&"block11.fc2.bias".to_string()));
        assert!(!schema(&ModelConfig::vit_medium_gap()).iter().any(|s| s.0 == "cls.token"));
    }

    proptest! {
        #[test]
        fn arbitrary_stores_round_trip(
            tensors in prop::collection::btree_map(
                "[a-z.0-9]{1,12}",
                prop::collection::vec(any::<u32>(), 0..20),
                0..5,
            )
        ) {
            let mut store = WeightStore::new();
            for (name, bits) in tensors {
                let data: Vec<f32> = bits.into_iter().map(f32::from_bits).collect();
                store.insert(name, Tensor::new(vec![data.len()], data).unwrap());
            }
            let bytes = store.to_bytes();
            let back = WeightStore::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
