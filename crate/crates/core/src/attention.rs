//! Multi-head self-attention with proportional (size-biased) logits and
//! top-θ attention-map sparsification.

use crate::error::{GtpError, Result};
use crate::linalg::{kth_largest, matmul, row_softmax_in_place, Matrix, SparseMatrix};

/// Per-head attention maps for the current live tokens, plus token sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    pub heads: usize,
    pub n: usize,
    pub maps: Vec<Matrix>,
    pub sizes: Vec<f64>,
}

impl AttentionTensor {
    pub fn new(maps: Vec<Matrix>, sizes: Vec<f64>) -> Result<Self> {
        let n = sizes.len();
        if maps.is_empty() {
            return Err(GtpError::Argument("attention tensor needs at least one head".into()));
        }
        if let Some(m) = maps.iter().find(|m| m.shape() != (n, n)) {
            return Err(GtpError::shape(
                "AttentionTensor::new",
                format!("map {:?} vs {n} tokens", m.shape()),
            ));
        }
        Ok(Self { heads: maps.len(), n, maps, sizes })
    }

    pub fn nonzeros_per_head(&self) -> Vec<usize> {
        self.maps
            .iter()
            .map(|m| m.data().iter().filter(|&&v| v != 0.0).count())
            .collect()
    }
}

/// Parameters of one transformer block. Linear weights are stored
/// `[in, out]` so a layer is `x · W + b`.
#[derive(Debug, Clone)]
pub struct BlockWeights {
    pub qkv_w: Matrix,
    pub qkv_b: Vec<f64>,
    pub out_w: Matrix,
    pub out_b: Vec<f64>,
    pub ln1_scale: Vec<f64>,
    pub ln1_shift: Vec<f64>,
    pub ln2_scale: Vec<f64>,
    pub ln2_shift: Vec<f64>,
    pub fc1_w: Matrix,
    pub fc1_b: Vec<f64>,
    pub fc2_w: Matrix,
    pub fc2_b: Vec<f64>,
}

impl BlockWeights {
    pub fn embed_dim(&self) -> usize {
        self.out_w.rows()
    }

    /// Checks every tensor against embedding width `c` and hidden width `hidden`.
    pub fn validate(&self, c: usize, hidden: usize) -> Result<()> {
        let mats = [
            ("qkv.weight", &self.qkv_w, (c, 3 * c)),
            ("out.weight", &self.out_w, (c, c)),
            ("fc1.weight", &self.fc1_w, (c, hidden)),
            ("fc2.weight", &self.fc2_w, (hidden, c)),
        ];
        for (name, m, want) in mats {
            if m.shape() != want {
                return Err(GtpError::Schema(format!("{name} is {:?}, expected {want:?}", m.shape())));
            }
        }
        let vecs = [
            ("qkv.bias", self.qkv_b.len(), 3 * c),
            ("out.bias", self.out_b.len(), c),
            ("ln1.weight", self.ln1_scale.len(), c),
            ("ln1.bias", self.ln1_shift.len(), c),
            ("ln2.weight", self.ln2_scale.len(), c),
            ("ln2.bias", self.ln2_shift.len(), c),
            ("fc1.bias", self.fc1_b.len(), hidden),
            ("fc2.bias", self.fc2_b.len(), c),
        ];
        for (name, got, want) in vecs {
            if got != want {
                return Err(GtpError::Schema(format!("{name} has length {got}, expected {want}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhsaOptions {
    pub theta: f64,
    /// Rescale rows to sum to one after sparsification.
    pub renormalize: bool,
    /// Also return the maps as they were before sparsification.
    pub keep_dense: bool,
}

impl Default for MhsaOptions {
    fn default() -> Self {
        Self { theta: 1.0, renormalize: false, keep_dense: false }
    }
}

#[derive(Debug, Clone)]
pub struct MhsaOutput {
    pub output: Matrix,
    pub attention: AttentionTensor,
    pub dense_attention: Option<AttentionTensor>,
}

/// `softmax(Q_h K_hᵀ / √d_k + log s)` per head, sparsified, mixed with V and
/// projected. `x` is the already-normalized block input.
pub fn mhsa_forward(
    x: &Matrix,
    w: &BlockWeights,
    heads: usize,
    sizes: &[f64],
    theta: f64,
) -> Result<(Matrix, AttentionTensor)> {
    let out = mhsa_forward_with(x, w, heads, sizes, MhsaOptions { theta, ..Default::default() })?;
    Ok((out.output, out.attention))
}

pub fn mhsa_forward_with(
    x: &Matrix,
    w: &BlockWeights,
    heads: usize,
    sizes: &[f64],
    opts: MhsaOptions,
) -> Result<MhsaOutput> {
    let (n, c) = x.shape();
    if heads == 0 || c % heads != 0 {
        return Err(GtpError::Config(format!("embed dim {c} not divisible by {heads} heads")));
    }
    if sizes.len() != n {
        return Err(GtpError::shape("mhsa_forward", format!("{} sizes for {n} tokens", sizes.len())));
    }
    check_theta(opts.theta)?;
    if let Some(s) = sizes.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(GtpError::Argument(format!("token size {s} must be positive")));
    }
    if w.qkv_w.shape() != (c, 3 * c) || w.out_w.shape() != (c, c) {
        return Err(GtpError::shape("mhsa_forward", "block weights do not match input width"));
    }

    let dk = c / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let log_sizes: Vec<f64> = sizes.iter().map(|&s| libm::log(s)).collect();

    let mut qkv = matmul(x, &w.qkv_w)?;
    qkv.add_row_vector(&w.qkv_b)?;

    let mut maps = Vec::with_capacity(heads);
    let mut dense = opts.keep_dense.then(|| Vec::with_capacity(heads));
    let mut mixed = Matrix::zeros(n, c);
    for h in 0..heads {
        let q = qkv.column_block(h * dk, dk);
        let k = qkv.column_block(c + h * dk, dk);
        let v = qkv.column_block(2 * c + h * dk, dk);

        let mut logits = matmul(&q, &k.transpose())?;
        for i in 0..n {
            for (l, ls) in logits.row_mut(i).iter_mut().zip(&log_sizes) {
                *l = *l * scale + ls;
            }
        }
        row_softmax_in_place(&mut logits);
        if let Some(d) = dense.as_mut() {
            d.push(logits.clone());
        }
        sparsify_map(&mut logits, opts.theta);
        if opts.renormalize && opts.theta < 1.0 {
            renormalize_rows(&mut logits);
        }
        mixed.set_column_block(h * dk, &matmul(&logits, &v)?);
        maps.push(logits);
    }

    let mut output = matmul(&mixed, &w.out_w)?;
    output.add_row_vector(&w.out_b)?;
    Ok(MhsaOutput {
        output,
        attention: AttentionTensor { heads, n, maps, sizes: sizes.to_vec() },
        dense_attention: dense.map(|maps| AttentionTensor { heads, n, maps, sizes: sizes.to_vec() }),
    })
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(GtpError::Argument(format!("theta {theta} outside [0, 1]")));
    }
    Ok(())
}

/// Number of entries kept out of `n2` at sparsity `theta`: `⌈θ·n2⌉`.
pub fn sparsity_budget(n2: usize, theta: f64) -> usize {
    let raw = theta * n2 as f64;
    // 4/9 * 9 evaluates to 4.000000000000001
    let k = (raw - 1e-9 * raw.max(1.0)).ceil();
    (k.max(0.0) as usize).min(n2)
}

/// Keeps the `⌈θ·N²⌉` largest entries of every head and zeroes the rest.
/// Ties at the cutoff favour the lower flat index. Rows are not rescaled.
pub fn sparsify_attention(a: &AttentionTensor, theta: f64) -> Result<AttentionTensor> {
    check_theta(theta)?;
    let mut out = a.clone();
    for m in &mut out.maps {
        sparsify_map(m, theta);
    }
    Ok(out)
}

fn sparsify_map(m: &mut Matrix, theta: f64) {
    let total = m.rows() * m.cols();
    let keep = sparsity_budget(total, theta);
    if keep == total {
        return;
    }
    if keep == 0 {
        m.data_mut().fill(0.0);
        return;
    }
    let cutoff = kth_largest(m.data(), keep).expect("budget within 1..=len");
    let above = m.data().iter().filter(|&&v| v > cutoff).count();
    let mut ties_left = keep - above;
    for v in m.data_mut() {
        if *v > cutoff {
            continue;
        }
        if *v == cutoff && ties_left > 0 {
            ties_left -= 1;
        } else {
            *v = 0.0;
        }
    }
}

fn renormalize_rows(m: &mut Matrix) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
    }
}

/// `s_kept + α · Â^p · s_prop`, the size counterpart of feature propagation.
pub fn update_sizes(s_kept: &[f64], s_prop: &[f64], a_hat_p: &SparseMatrix, alpha: f64) -> Result<Vec<f64>> {
    if a_hat_p.rows() != s_kept.len() || a_hat_p.cols() != s_prop.len() {
        return Err(GtpError::shape(
            "update_sizes",
            format!(
                "Â^p {}x{} with {} kept / {} propagated sizes",
                a_hat_p.rows(),
                a_hat_p.cols(),
                s_kept.len(),
                s_prop.len()
            ),
        ));
    }
    if alpha == 0.0 || s_prop.is_empty() {
        return Ok(s_kept.to_vec());
    }
    let spread = a_hat_p.mul_vec(s_prop)?;
    Ok(s_kept.iter().zip(spread).map(|(k, p)| k + alpha * p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    pub(crate) fn random_block(c: usize, hidden: usize, rng: &mut SplitMix64) -> BlockWeights {
        let mut mat = |r: usize, k: usize| Matrix::from_fn(r, k, |_, _| rng.uniform(-0.5, 0.5));
        let qkv_w = mat(c, 3 * c);
        let out_w = mat(c, c);
        let fc1_w = mat(c, hidden);
        let fc2_w = mat(hidden, c);
        let vec = |len: usize| (0..len).map(|i| 0.01 * i as f64 - 0.02).collect::<Vec<_>>();
        BlockWeights {
            qkv_b: vec(3 * c),
            out_b: vec(c),
            ln1_scale: vec![1.0; c],
            ln1_shift: vec![0.0; c],
            ln2_scale: vec![1.0; c],
            ln2_shift: vec![0.0; c],
            fc1_b: vec(hidden),
            fc2_b: vec(c),
            qkv_w,
            out_w,
            fc1_w,
            fc2_w,
        }
    }

    /// Unfused scalar-loop reference for one MHSA layer.
    fn reference_mhsa(x: &Matrix, w: &BlockWeights, heads: usize, sizes: &[f64]) -> (Matrix, Vec<Matrix>) {
        let (n, c) = x.shape();
        let dk = c / heads;
        let lin = |x: &Matrix, wm: &Matrix, b: &[f64]| {
            Matrix::from_fn(x.rows(), wm.cols(), |i, j| {
                let mut s = b[j];
                for k in 0..x.cols() {
                    s += x.get(i, k) * wm.get(k, j);
                }
                s
            })
        };
        let qkv = lin(x, &w.qkv_w, &w.qkv_b);
        let mut concat = Matrix::zeros(n, c);
        let mut maps = Vec::new();
        for h in 0..heads {
            let mut a = Matrix::zeros(n, n);
            for i in 0..n {
                let mut logits = vec![0.0; n];
                for j in 0..n {
                    let mut s = 0.0;
                    for d in 0..dk {
                        s += qkv.get(i, h * dk + d) * qkv.get(j, c + h * dk + d);
                    }
                    logits[j] = s / (dk as f64).sqrt() + sizes[j].ln();
                }
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
                for j in 0..n {
                    a.set(i, j, (logits[j] - mx).exp() / z);
                }
            }
            for i in 0..n {
                for d in 0..dk {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += a.get(i, j) * qkv.get(j, 2 * c + h * dk + d);
                    }
                    concat.set(i, h * dk + d, s);
                }
            }
            maps.push(a);
        }
        (lin(&concat, &w.out_w, &w.out_b), maps)
    }

    #[test]
    fn matches_scalar_reference() {
        let mut rng = SplitMix64::new(21);
        let w = random_block(8, 32, &mut rng);
        let x = Matrix::from_fn(4, 8, |_, _| rng.uniform(-1.0, 1.0));
        for sizes in [vec![1.0; 4], vec![1.0, 2.5, 1.3, 4.0]] {
            let (out, attn) = mhsa_forward(&x, &w, 2, &sizes, 1.0).unwrap();
            let (want, maps) = reference_mhsa(&x, &w, 2, &sizes);
            for (a, b) in out.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-10);
            }
            for (m, r) in attn.maps.iter().zip(&maps) {
                for (a, b) in m.data().iter().zip(r.data()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rows_sum_to_one_before_sparsification() {
        let mut rng = SplitMix64::new(22);
        let w = random_block(12, 48, &mut rng);
        let x = Matrix::from_fn(7, 12, |_, _| rng.uniform(-2.0, 2.0));
        let (_, attn) = mhsa_forward(&x, &w, 3, &[1.0, 2.0, 1.0, 3.0, 1.0, 1.5, 1.0], 1.0).unwrap();
        for m in &attn.maps {
            for i in 0..7 {
                assert!((m.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn config_and_shape_errors() {
        let mut rng = SplitMix64::new(23);
        let w = random_block(8, 32, &mut rng);
        let x = Matrix::zeros(3, 8);
        assert!(matches!(mhsa_forward(&x, &w, 3, &[1.0; 3], 1.0), Err(GtpError::Config(_))));
        assert!(mhsa_forward(&x, &w, 2, &[1.0; 2], 1.0).is_err());
        assert!(mhsa_forward(&x, &w, 2, &[1.0; 3], 1.5).is_err());
        assert!(mhsa_forward(&x, &w, 2, &[1.0, 0.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn sparsify_examples() {
        let map = Matrix::from_rows(&[
            vec![0.5, 0.2, 0.3],
            vec![0.1, 0.6, 0.3],
            vec![0.25, 0.25, 0.5],
        ])
        .unwrap();
        let a = AttentionTensor::new(vec![map.clone()], vec![1.0; 3]).unwrap();
        assert_eq!(sparsify_attention(&a, 1.0).unwrap(), a);
        assert!(sparsify_attention(&a, 0.0).unwrap().maps[0].data().iter().all(|&v| v == 0.0));

        let s = sparsify_attention(&a, 4.0 / 9.0).unwrap();
        // sort oracle: the four largest are 0.6, 0.5, 0.5, then the first 0.3
        let mut order: Vec<usize> = (0..9).collect();
        order.sort_by(|&x, &y| map.data()[y].total_cmp(&map.data()[x]).then(x.cmp(&y)));
        let mut want = vec![0.0; 9];
        for &i in &order[..4] {
            want[i] = map.data()[i];
        }
        assert_eq!(s.maps[0].data(), want.as_slice());
        assert_eq!(s.nonzeros_per_head(), vec![4]);
    }

    #[test]
    fn budget_rounding() {
        assert_eq!(sparsity_budget(9, 4.0 / 9.0), 4);
        assert_eq!(sparsity_budget(9, 0.5), 5);
        assert_eq!(sparsity_budget(197 * 197, 1.0), 197 * 197);
        assert_eq!(sparsity_budget(100, 0.7), 70);
        assert_eq!(sparsity_budget(10, 0.0), 0);
    }

    #[test]
    fn size_update_examples() {
        let view = SparseMatrix::from_entries(4, 2, vec![(0, 0, 0.5), (1, 1, 0.25), (3, 0, 0.2), (3, 1, 1.0)]).unwrap();
        let kept = [1.0, 2.0, 1.0, 1.5];
        assert_eq!(update_sizes(&kept, &[1.0, 3.0], &view, 0.0).unwrap(), kept.to_vec());
        let empty = SparseMatrix::empty(4, 0);
        assert_eq!(update_sizes(&kept, &[], &empty, 0.7).unwrap(), kept.to_vec());
        // by hand: Â^p·s^p = [0.5, 0.75, 0, 3.2]
        let got = update_sizes(&kept, &[1.0, 3.0], &view, 0.25).unwrap();
        for (g, w) in got.iter().zip([1.125, 2.1875, 1.0, 2.3]) {
            assert!((g - w).abs() < 1e-15);
        }
        assert!(update_sizes(&kept, &[1.0], &view, 0.25).is_err());
    }
}
