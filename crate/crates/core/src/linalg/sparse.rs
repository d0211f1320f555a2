use super::macs::{self, MacKind};
use super::matrix::Matrix;
use crate::error::{GtpError, Result};

/// Coordinate-list sparse matrix, entries ordered by row then column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self { rows, cols, entries: Vec::new() }
    }

    /// Sorts the entries; duplicate coordinates and out-of-range
    /// coordinates are rejected.
    pub fn from_entries(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        entries.sort_by_key(|e| (e.0, e.1));
        for w in entries.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(GtpError::Argument(format!(
                    "duplicate sparse entry ({}, {})",
                    w[0].0, w[0].1
                )));
            }
        }
        if let Some(&(r, c, _)) = entries.iter().find(|e| e.0 >= rows || e.1 >= cols) {
            return Err(GtpError::shape(
                "SparseMatrix::from_entries",
                format!("entry ({r}, {c}) outside {rows}x{cols}"),
            ));
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn from_dense(m: &Matrix) -> Self {
        let mut entries = Vec::new();
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        Self { rows: m.rows(), cols: m.cols(), entries }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for &(i, j, v) in &self.entries {
            m.set(i, j, v);
        }
        m
    }

    /// `self · x` for a dense right operand, tallied as overhead MACs.
    pub fn mul_dense(&self, x: &Matrix) -> Result<Matrix> {
        if self.cols != x.rows() {
            return Err(GtpError::shape(
                "SparseMatrix::mul_dense",
                format!("{}x{} · {}x{}", self.rows, self.cols, x.rows(), x.cols()),
            ));
        }
        let mut out = Matrix::zeros(self.rows, x.cols());
        for &(i, j, w) in &self.entries {
            let src = x.row(j);
            for (o, s) in out.row_mut(i).iter_mut().zip(src) {
                *o += w * s;
            }
        }
        macs::record(MacKind::Overhead, (self.entries.len() * x.cols()) as u64);
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(GtpError::shape(
                "SparseMatrix::mul_vec",
                format!("{}x{} · {}", self.rows, self.cols, v.len()),
            ));
        }
        let mut out = vec![0.0; self.rows];
        for &(i, j, w) in &self.entries {
            out[i] += w * v[j];
        }
        Ok(out)
    }
}
