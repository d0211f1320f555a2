//! Dense and sparse linear algebra plus selection primitives.

pub mod macs;
mod matrix;
mod select;
mod sparse;

pub use matrix::{cosine_similarity, dot, matmul, matmul_as, norm, row_softmax, row_softmax_in_place, Matrix};
pub use select::{argsort_desc, kth_largest, IndexSet};
pub use sparse::SparseMatrix;
