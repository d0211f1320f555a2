use std::cmp::Ordering;

use crate::error::{GtpError, Result};

/// Strictly increasing list of token positions.
#[derive(Debug, Clone, PartialEq, Eq, Default, serde::Serialize)]
#[serde(transparent)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if let Some(w) = indices.windows(2).find(|w| w[0] >= w[1]) {
            return Err(GtpError::Argument(format!(
                "index set not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(Self(indices))
    }

    /// Sorts and deduplicates.
    pub fn from_unsorted(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    pub fn range(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn check_bound(&self, bound: usize) -> Result<()> {
        match self.0.last() {
            Some(&last) if last >= bound => Err(GtpError::Argument(format!(
                "index {last} out of range for dimension {bound}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.0.binary_search(&idx).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

/// Stable descending order; ties keep the lower original index first.
pub fn argsort_desc(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

/// The k-th largest value (1-based, duplicates counted) via quickselect with
/// a median-of-three pivot. Expected O(n).
pub fn kth_largest(values: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > values.len() {
        return Err(GtpError::Argument(format!(
            "k = {k} outside 1..={}",
            values.len()
        )));
    }
    let mut buf = values.to_vec();
    Ok(select_desc(&mut buf, k - 1))
}

/// Rearranges `v` so that `v[rank]` holds the element that would sit at
/// `rank` in a descending sort, and returns it.
fn select_desc(v: &mut [f64], rank: usize) -> f64 {
    let desc = |a: &f64, b: &f64| b.total_cmp(a);
    let (mut lo, mut hi) = (0, v.len() - 1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        // median of three into v[hi]
        if desc(&v[mid], &v[lo]) == Ordering::Less {
            v.swap(mid, lo);
        }
        if desc(&v[hi], &v[lo]) == Ordering::Less {
            v.swap(hi, lo);
        }
        if desc(&v[mid], &v[hi]) == Ordering::Less {
            v.swap(mid, hi);
        }
        let pivot = v[hi];

        // three-way partition: [before pivot | equal | after pivot]
        let (mut lt, mut i, mut gt) = (lo, lo, hi + 1);
        while i < gt {
            match desc(&v[i], &pivot) {
                Ordering::Less => {
                    v.swap(lt, i);
                    lt += 1;
                    i += 1;
                }
                Ordering::Greater => {
                    gt -= 1;
                    v.swap(i, gt);
                }
                Ordering::Equal => i += 1,
            }
        }
        if rank < lt {
            hi = lt - 1;
        } else if rank >= gt {
            lo = gt;
        } else {
            return pivot;
        }
    }
    v[lo]
}
