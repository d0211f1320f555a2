//! Token graphs over image patches.
//!
//! The graph is built once from the post-embedding feature map: an
//! 8-neighbourhood spatial graph, a per-row top-M cosine semantic graph, or
//! their union. It is normalized as `D^{-1/2} A D^{-1/2}` and kept sparse.
//! As tokens are eliminated the graph only shrinks its live set; surviving
//! weights are never renormalized.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{GtpError, Result};
use crate::linalg::macs::{self, MacKind};
use crate::linalg::{dot, kth_largest, norm, IndexSet, Matrix, SparseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Spatial,
    Semantic,
    Mixed,
    /// No graph: eliminated tokens are dropped without propagation.
    None,
}

impl std::str::FromStr for GraphKind {
    type Err = GtpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spatial" => Ok(GraphKind::Spatial),
            "semantic" => Ok(GraphKind::Semantic),
            "mixed" => Ok(GraphKind::Mixed),
            "none" => Ok(GraphKind::None),
            other => Err(GtpError::Config(format!("unknown graph kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for GraphKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            GraphKind::Spatial => "spatial",
            GraphKind::Semantic => "semantic",
            GraphKind::Mixed => "mixed",
            GraphKind::None => "none",
        };
        f.write_str(s)
    }
}

/// Raw 0/1 adjacency as sorted out-neighbour lists. Never holds self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self { neighbors: vec![Vec::new(); n] }
    }

    /// Builds from an edge list; self-loops are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(GtpError::Argument(format!("edge ({i}, {j}) outside {n} nodes")));
            }
            if i == j {
                return Err(GtpError::Argument(format!("self-loop at node {i}")));
            }
            neighbors[i].push(j);
        }
        for row in &mut neighbors {
            row.sort_unstable();
            row.dedup();
        }
        Ok(Self { neighbors })
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn nnz(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n()).all(|i| self.neighbors[i].iter().all(|&j| self.has_edge(j, i)))
    }

    pub fn to_dense(&self) -> Matrix {
        let n = self.n();
        let mut m = Matrix::zeros(n, n);
        for (i, row) in self.neighbors.iter().enumerate() {
            for &j in row {
                m.set(i, j, 1.0);
            }
        }
        m
    }
}

/// Moore (8-neighbourhood) adjacency on a row-major patch grid.
pub fn build_spatial(grid_h: usize, grid_w: usize) -> Result<Adjacency> {
    if grid_h == 0 || grid_w == 0 {
        return Err(GtpError::Argument(format!("empty grid {grid_h}x{grid_w}")));
    }
    let mut neighbors = Vec::with_capacity(grid_h * grid_w);
    for r in 0..grid_h as isize {
        for c in 0..grid_w as isize {
            let mut row = Vec::with_capacity(8);
            for dr in -1..=1isize {
                for dc in -1..=1isize {
                    let (rr, cc) = (r + dr, c + dc);
                    if (dr, dc) != (0, 0)
                        && (0..grid_h as isize).contains(&rr)
                        && (0..grid_w as isize).contains(&cc)
                    {
                        row.push(rr as usize * grid_w + cc as usize);
                    }
                }
            }
            neighbors.push(row);
        }
    }
    Ok(Adjacency { neighbors })
}

/// Row `i` links to every `j != i` whose cosine similarity reaches the
/// m-th largest similarity of row `i`. Ties at the threshold are all kept.
pub fn build_semantic(x0: &Matrix, m: usize) -> Result<Adjacency> {
    let (n, c) = x0.shape();
    if m == 0 || m >= n {
        return Err(GtpError::Argument(format!(
            "semantic neighbours M = {m} must be in 1..{n}"
        )));
    }
    let norms: Vec<f64> = (0..n).map(|i| norm(x0.row(i))).collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(GtpError::Degenerate(format!("token {i} has zero norm")));
    }

    let mut sims = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let s = (dot(x0.row(i), x0.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            sims.set(i, j, s);
            sims.set(j, i, s);
        }
    }
    macs::record(MacKind::Overhead, (n * (n - 1) / 2 * c + n * c) as u64);

    let mut neighbors = Vec::with_capacity(n);
    let mut others = Vec::with_capacity(n - 1);
    for i in 0..n {
        others.clear();
        others.extend((0..n).filter(|&j| j != i).map(|j| sims.get(i, j)));
        let threshold = kth_largest(&others, m)?;
        neighbors.push((0..n).filter(|&j| j != i && sims.get(i, j) >= threshold).collect());
    }
    Ok(Adjacency { neighbors })
}

/// Entrywise union.
pub fn build_mixed(spatial: &Adjacency, semantic: &Adjacency) -> Result<Adjacency> {
    if spatial.n() != semantic.n() {
        return Err(GtpError::shape(
            "build_mixed",
            format!("{} vs {} nodes", spatial.n(), semantic.n()),
        ));
    }
    let neighbors = spatial
        .neighbors
        .iter()
        .zip(&semantic.neighbors)
        .map(|(a, b)| {
            let mut row: Vec<usize> = a.iter().chain(b).copied().collect();
            row.sort_unstable();
            row.dedup();
            row
        })
        .collect();
    Ok(Adjacency { neighbors })
}

/// `D^{-1/2} A D^{-1/2}` with `D_ii = Σ_j A_ij`.
///
/// A zero degree contributes a zero scale factor, so zero-degree rows (and
/// edges pointing at zero-degree nodes) vanish instead of dividing by zero.
pub fn normalize(adj: &Adjacency) -> SparseMatrix {
    let inv_sqrt: Vec<f64> = (0..adj.n())
        .map(|i| match adj.degree(i) {
            0 => 0.0,
            d => 1.0 / (d as f64).sqrt(),
        })
        .collect();
    let mut entries = Vec::with_capacity(adj.nnz());
    for (i, row) in adj.neighbors.iter().enumerate() {
        for &j in row {
            let w = inv_sqrt[i] * inv_sqrt[j];
            if w != 0.0 {
                entries.push((i, j, w));
            }
        }
    }
    // rows are visited in order and neighbour lists are sorted
    SparseMatrix::from_entries(adj.n(), adj.n(), entries).expect("normalized entries are well-formed")
}

/// Normalized token graph plus the set of image tokens still alive.
#[derive(Debug, Clone)]
pub struct TokenGraph {
    grid_h: usize,
    grid_w: usize,
    weights: SparseMatrix,
    row_ptr: Vec<usize>,
    live: IndexSet,
}

impl TokenGraph {
    /// Builds and normalizes the requested graph over the image-token rows
    /// `x0` (no [CLS] row). `GraphKind::None` yields an edgeless graph.
    pub fn build(kind: GraphKind, x0: &Matrix, grid_h: usize, grid_w: usize, m: usize) -> Result<Self> {
        if grid_h * grid_w != x0.rows() {
            return Err(GtpError::shape(
                "TokenGraph::build",
                format!("grid {grid_h}x{grid_w} vs {} tokens", x0.rows()),
            ));
        }
        let adj = match kind {
            GraphKind::Spatial => build_spatial(grid_h, grid_w)?,
            GraphKind::Semantic => build_semantic(x0, m)?,
            GraphKind::Mixed => build_mixed(&build_spatial(grid_h, grid_w)?, &build_semantic(x0, m)?)?,
            GraphKind::None => Adjacency::empty(x0.rows()),
        };
        Self::from_adjacency(&adj, grid_h, grid_w)
    }

    pub fn from_adjacency(adj: &Adjacency, grid_h: usize, grid_w: usize) -> Result<Self> {
        if grid_h * grid_w != adj.n() {
            return Err(GtpError::shape(
                "TokenGraph::from_adjacency",
                format!("grid {grid_h}x{grid_w} vs {} nodes", adj.n()),
            ));
        }
        let weights = normalize(adj);
        let mut row_ptr = vec![0; adj.n() + 1];
        for &(i, _, _) in weights.entries() {
            row_ptr[i + 1] += 1;
        }
        for i in 0..adj.n() {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self { grid_h, grid_w, weights, row_ptr, live: IndexSet::range(adj.n()) })
    }

    pub fn n_tokens(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_h, self.grid_w)
    }

    pub fn live(&self) -> &IndexSet {
        &self.live
    }

    pub fn weights(&self) -> &SparseMatrix {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let row = &self.weights.entries()[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search_by(|e| e.1.cmp(&j)).map_or(0.0, |k| row[k].2)
    }

    fn check_partition(&self, kept: &IndexSet, propagated: &IndexSet) -> Result<()> {
        if kept.len() + propagated.len() != self.live.len() {
            return Err(GtpError::Partition(format!(
                "{} kept + {} propagated != {} live",
                kept.len(),
                propagated.len(),
                self.live.len()
            )));
        }
        if let Some(i) = kept.iter().find(|&i| propagated.contains(i)) {
            return Err(GtpError::Partition(format!("token {i} both kept and propagated")));
        }
        if let Some(i) = kept.iter().chain(propagated.iter()).find(|&i| !self.live.contains(i)) {
            return Err(GtpError::Partition(format!("token {i} is not live")));
        }
        Ok(())
    }

    /// Submatrix of the normalized adjacency with rows `kept` and columns
    /// `propagated`, both given as original token ids.
    pub fn extract_propagation_view(&self, kept: &IndexSet, propagated: &IndexSet) -> Result<SparseMatrix> {
        self.check_partition(kept, propagated)?;
        let mut col_of = vec![usize::MAX; self.n_tokens()];
        for (c, p) in propagated.iter().enumerate() {
            col_of[p] = c;
        }
        let mut entries = Vec::new();
        for (r, k) in kept.iter().enumerate() {
            for &(_, j, w) in &self.weights.entries()[self.row_ptr[k]..self.row_ptr[k + 1]] {
                if col_of[j] != usize::MAX {
                    entries.push((r, col_of[j], w));
                }
            }
        }
        SparseMatrix::from_entries(kept.len(), propagated.len(), entries)
    }

    /// Shrinks the live set to `kept`, which must be a subset of it.
    pub fn retain(&mut self, kept: IndexSet) -> Result<()> {
        if let Some(i) = kept.iter().find(|&i| !self.live.contains(i)) {
            return Err(GtpError::Partition(format!("token {i} is not live")));
        }
        self.live = kept;
        Ok(())
    }

    /// "row col weight" lines over the full normalized adjacency.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for &(i, j, w) in self.weights.entries() {
            let _ = writeln!(out, "{i} {j} {w:e}");
        }
        out
    }
}
