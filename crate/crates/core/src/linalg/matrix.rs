use std::fmt;

use super::macs::{self, MacKind};
use crate::error::{GtpError, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            f.debug_list().entries(self.data.chunks(self.cols.max(1))).finish()?;
        }
        Ok(())
    }
}

impl Matrix {
    /// Builds a matrix, rejecting a wrong data length or non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(GtpError::shape(
                "Matrix::new",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(GtpError::NonFinite("Matrix::new"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(GtpError::shape(
                "Matrix::from_rows",
                format!("ragged rows: {} vs {}", bad.len(), cols),
            ));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Copies the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix { rows: rows.len(), cols: self.cols, data }
    }

    /// Copies columns `start..start + len`.
    pub fn column_block(&self, start: usize, len: usize) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * len);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..start + len]);
        }
        Matrix { rows: self.rows, cols: len, data }
    }

    /// Writes `block` into columns starting at `start`.
    pub fn set_column_block(&mut self, start: usize, block: &Matrix) {
        debug_assert_eq!(block.rows, self.rows);
        for i in 0..self.rows {
            let cols = self.cols;
            self.data[i * cols + start..i * cols + start + block.cols].copy_from_slice(block.row(i));
        }
    }

    /// Adds `bias` to every row.
    pub fn add_row_vector(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(GtpError::shape(
                "add_row_vector",
                format!("bias length {} vs {} columns", bias.len(), self.cols),
            ));
        }
        for row in self.data.chunks_mut(self.cols) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(GtpError::shape(
                "add_assign",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }
}

const TILE_K: usize = 64;
const TILE_J: usize = 256;

/// Dense product `a · b`, tallied as backbone MACs.
///
/// Each output entry accumulates `a[i,k]·b[k,j]` in increasing `k`, so the
/// result is bitwise equal to the textbook triple loop.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    matmul_as(a, b, MacKind::Backbone)
}

pub fn matmul_as(a: &Matrix, b: &Matrix, kind: MacKind) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(GtpError::shape(
            "matmul",
            format!("{}x{} · {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let (m, inner, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; m * n];
    for j0 in (0..n).step_by(TILE_J) {
        let j1 = (j0 + TILE_J).min(n);
        for k0 in (0..inner).step_by(TILE_K) {
            let k1 = (k0 + TILE_K).min(inner);
            for i in 0..m {
                let a_row = &a.data[i * inner..(i + 1) * inner];
                let out_row = &mut out[i * n + j0..i * n + j1];
                for k in k0..k1 {
                    let aik = a_row[k];
                    let b_row = &b.data[k * n + j0..k * n + j1];
                    for (o, bv) in out_row.iter_mut().zip(b_row) {
                        *o += aik * bv;
                    }
                }
            }
        }
    }
    macs::record(kind, (m * inner * n) as u64);
    Ok(Matrix { rows: m, cols: n, data: out })
}

/// Row-wise softmax with per-row max subtraction.
pub fn row_softmax(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    row_softmax_in_place(&mut out);
    out
}

pub fn row_softmax_in_place(m: &mut Matrix) {
    let cols = m.cols;
    if cols == 0 {
        return;
    }
    for row in m.data.chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// `x·y / (‖x‖·‖y‖)`, clamped to [-1, 1].
pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(GtpError::shape(
            "cosine_similarity",
            format!("lengths {} and {}", x.len(), y.len()),
        ));
    }
    let (nx, ny) = (norm(x), norm(y));
    if nx == 0.0 || ny == 0.0 {
        return Err(GtpError::Degenerate("cosine similarity of a zero-norm vector".into()));
    }
    Ok((dot(x, y) / (nx * ny)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn random(rows: usize, cols: usize, rng: &mut SplitMix64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
    }

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            s
        })
    }

    #[test]
    fn identity_product() {
        let mut rng = SplitMix64::new(1);
        let b = random(3, 4, &mut rng);
        assert_eq!(matmul(&Matrix::identity(3), &b).unwrap(), b);
    }

    #[test]
    fn small_hand_product() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = SplitMix64::new(2);
        let a = random(5, 7, &mut rng);
        let b = random(7, 3, &mut rng);
        let (c, count) = macs::measure(|| matmul(&a, &b).unwrap());
        let want = naive(&a, &b);
        for (x, y) in c.data().iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(count.backbone, 105);
    }

    #[test]
    fn tiled_path_is_bitwise_naive() {
        let mut rng = SplitMix64::new(3);
        let a = random(9, 300, &mut rng);
        let b = random(300, 270, &mut rng);
        assert_eq!(matmul(&a, &b).unwrap(), naive(&a, &b));
    }

    #[test]
    fn dimension_mismatch() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(GtpError::Shape { .. })));
    }

    #[test]
    fn new_rejects_bad_input() {
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Matrix::new(1, 2, vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let m = Matrix::from_rows(&[
            vec![0.0, 0.0, 0.0],
            vec![1f64.ln(), 2f64.ln(), 3f64.ln()],
        ])
        .unwrap();
        let s = row_softmax(&m);
        for j in 0..3 {
            assert!((s.get(0, j) - 1.0 / 3.0).abs() < 1e-15);
            assert!((s.get(1, j) - (j + 1) as f64 / 6.0).abs() < 1e-15);
        }
        let big = row_softmax(&Matrix::from_rows(&[vec![1000.0, 1001.0]]).unwrap());
        let e = std::f64::consts::E;
        assert!((big.get(0, 0) - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((big.get(0, 1) - e / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let v = cosine_similarity(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert!((v - 10.0 / 14.0).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(GtpError::Degenerate(_))
        ));
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(
            width in 1usize..1024,
            seed in any::<u64>(),
            scale in 0.1f64..500.0,
        ) {
            let mut rng = SplitMix64::new(seed);
            let m = Matrix::from_fn(2, width, |_, _| rng.uniform(-scale, scale));
            let s = row_softmax(&m);
            prop_assert!(s.is_finite());
            for i in 0..2 {
                let sum: f64 = s.row(i).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn matmul_associative(seed in any::<u64>(), n in 1usize..6, k in 1usize..6, p in 1usize..6, q in 1usize..6) {
            let mut rng = SplitMix64::new(seed);
            let a = random(n, k, &mut rng);
            let b = random(k, p, &mut rng);
            let c = random(p, q, &mut rng);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs())));
            }
        }
    }
}
