//! Feature vectors fed to the classifiers.
//!
//! Bag-of-words blocks are very sparse while tabular blocks are small and
//! dense, so a fused vector is stored as sorted `(index, value)` pairs.

use serde::{Deserialize, Serialize};

/// Dense real vector (tabular encodings, embeddings).
pub type DenseVector = Vec<f64>;

/// Sparse real vector with strictly increasing indices below `dimension`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    dimension: usize,
    entries: Vec<(usize, f64)>,
}

impl FeatureVector {
    /// Builds from pairs that are already sorted by index with no duplicates.
    pub fn from_sorted(dimension: usize, entries: Vec<(usize, f64)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        debug_assert!(entries.last().is_none_or(|e| e.0 < dimension));
        FeatureVector { dimension, entries }
    }

    /// Stores every non-zero coordinate of `values`.
    pub fn from_dense(values: &[f64]) -> Self {
        let entries = values.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i, *v)).collect();
        FeatureVector { dimension: values.len(), entries }
    }

    pub fn zeros(dimension: usize) -> Self {
        FeatureVector { dimension, entries: Vec::new() }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, v)| v.is_finite())
    }

    pub fn to_dense(&self) -> DenseVector {
        let mut out = vec![0.0; self.dimension];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }

    /// `[self ‖ other]`, shifting the indices of `other` by `self.dimension`.
    pub fn concat(&self, other: &FeatureVector) -> FeatureVector {
        let mut entries = Vec::with_capacity(self.entries.len() + other.entries.len());
        entries.extend_from_slice(&self.entries);
        entries.extend(other.entries.iter().map(|&(i, v)| (i + self.dimension, v)));
        FeatureVector { dimension: self.dimension + other.dimension, entries }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_shifts_indices() {
        let a = FeatureVector::from_dense(&[0.0, 2.0]);
        let b = FeatureVector::from_dense(&[1.0, 0.0, 3.0]);
        let c = a.concat(&b);
        assert_eq!(c.dimension(), 5);
        assert_eq!(c.entries(), &[(1, 2.0), (2, 1.0), (4, 3.0)]);
        assert_eq!(c.to_dense(), vec![0.0, 2.0, 1.0, 0.0, 3.0]);
    }
}
