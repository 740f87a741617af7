//! Sparse N-way count tensors in coordinate form.
//!
//! Indices are 0-based inside the library. The COO text format (see
//! [`crate::io`]) is 1-based.
//!
//! Entries are kept sorted lexicographically by multi-index, so grouping by
//! mode and serialization are deterministic.

use crate::error::{Error, Result};

/// Tensor dimensions `I_1 x ... x I_N` with `N >= 2` and every `I_n >= 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidShape(format!(
                "need at least 2 modes, got {}",
                dims.len()
            )));
        }
        if let Some(n) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidShape(format!("mode {n} has zero length")));
        }
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn ndims(&self) -> usize {
        self.0.len()
    }

    pub fn dim(&self, mode: usize) -> usize {
        self.0[mode]
    }

    /// Number of cells, as a float since the product overflows for big shapes.
    pub fn num_cells(&self) -> f64 {
        self.0.iter().map(|&d| d as f64).product()
    }

    /// Column count `J_n` of the mode-`n` unfolding.
    pub fn unfolded_cols(&self, mode: usize) -> usize {
        self.0
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != mode)
            .map(|(_, &d)| d)
            .product()
    }

    pub fn contains(&self, index: &[usize]) -> bool {
        index.len() == self.0.len() && index.iter().zip(&self.0).all(|(&i, &d)| i < d)
    }

    fn check(&self, index: &[usize]) -> Result<()> {
        if self.contains(index) {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: index.to_vec(),
                dims: self.0.clone(),
            })
        }
    }

    /// Column of the mode-`n` unfolding that holds `index`.
    ///
    /// Follows the Kolda-Bader ordering: the remaining modes vary fastest from
    /// the lowest mode up, `j = sum_{k != n} i_k * prod_{m < k, m != n} I_m`.
    pub fn mode_column_index(&self, mode: usize, index: &[usize]) -> Result<usize> {
        self.check(index)?;
        if mode >= self.ndims() {
            return Err(Error::InvalidShape(format!(
                "mode {mode} out of range for {} modes",
                self.ndims()
            )));
        }
        let mut col = 0;
        let mut stride = 1;
        for (k, (&i, &d)) in index.iter().zip(&self.0).enumerate() {
            if k == mode {
                continue;
            }
            col += i * stride;
            stride *= d;
        }
        Ok(col)
    }
}

/// Nonnegative integer count tensor. Zeros are implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCountTensor {
    shape: Shape,
    /// Flattened multi-indices, `nnz * N` values.
    indices: Vec<usize>,
    counts: Vec<u64>,
}

impl SparseCountTensor {
    /// Validates and sorts the entries.
    ///
    /// Fails on an index outside `shape`, a repeated index, or a zero count.
    pub fn from_entries(shape: Shape, entries: Vec<(Vec<usize>, u64)>) -> Result<Self> {
        for (index, count) in &entries {
            shape.check(index)?;
            if *count == 0 {
                return Err(Error::NonpositiveCount(index.clone()));
            }
        }
        let mut entries = entries;
        entries.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::DuplicateIndex(pair[0].0.clone()));
            }
        }
        let n = shape.ndims();
        let mut indices = Vec::with_capacity(entries.len() * n);
        let mut counts = Vec::with_capacity(entries.len());
        for (index, count) in entries {
            indices.extend_from_slice(&index);
            counts.push(count);
        }
        Ok(Self {
            shape,
            indices,
            counts,
        })
    }

    pub fn empty(shape: Shape) -> Self {
        Self {
            shape,
            indices: Vec::new(),
            counts: Vec::new(),
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn ndims(&self) -> usize {
        self.shape.ndims()
    }

    pub fn nnz(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn subscript(&self, k: usize) -> &[usize] {
        let n = self.ndims();
        &self.indices[k * n..(k + 1) * n]
    }

    pub fn count(&self, k: usize) -> u64 {
        self.counts[k]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn entries(&self) -> impl Iterator<Item = (&[usize], u64)> + '_ {
        self.indices
            .chunks_exact(self.ndims())
            .zip(self.counts.iter().copied())
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Fraction of cells holding a nonzero, `nnz / prod I_n`.
    pub fn density(&self) -> f64 {
        self.nnz() as f64 / self.shape.num_cells()
    }

    /// Regroups the nonzeros by their mode-`n` index (one group per
    /// nonempty row of the unfolding, sorted by row).
    pub fn group_by_mode(&self, mode: usize) -> Vec<ModeRowGroup> {
        assert!(mode < self.ndims(), "mode {mode} out of range");
        let n = self.ndims();
        let rows = self.shape.dim(mode);

        let mut per_row = vec![0usize; rows];
        for idx in self.indices.chunks_exact(n) {
            per_row[idx[mode]] += 1;
        }
        let mut groups: Vec<Option<ModeRowGroup>> = per_row
            .iter()
            .enumerate()
            .map(|(row, &len)| {
                (len > 0).then(|| ModeRowGroup {
                    mode,
                    row,
                    reduced: Vec::with_capacity(len * (n - 1)),
                    counts: Vec::with_capacity(len),
                })
            })
            .collect();
        for (idx, count) in self.entries() {
            let g = groups[idx[mode]].as_mut().expect("row was counted");
            g.reduced.extend(
                idx.iter()
                    .enumerate()
                    .filter(|&(k, _)| k != mode)
                    .map(|(_, &i)| i),
            );
            g.counts.push(count);
        }
        groups.into_iter().flatten().collect()
    }
}

/// The nonzeros of one row of a mode-`n` unfolding.
///
/// Each item pairs the indices of the other `N-1` modes (in mode order, with
/// mode `n` dropped) with its count.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeRowGroup {
    pub mode: usize,
    pub row: usize,
    reduced: Vec<usize>,
    counts: Vec<u64>,
}

impl ModeRowGroup {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn reduced_index(&self, k: usize) -> &[usize] {
        let w = self.reduced.len() / self.counts.len();
        &self.reduced[k * w..(k + 1) * w]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn items(&self) -> impl Iterator<Item = (&[usize], u64)> + '_ {
        (0..self.len()).map(move |k| (self.reduced_index(k), self.counts[k]))
    }

    /// Rebuilds the full multi-index of item `k`.
    pub fn full_index(&self, k: usize) -> Vec<usize> {
        let mut full = self.reduced_index(k).to_vec();
        full.insert(self.mode, self.row);
        full
    }
}
