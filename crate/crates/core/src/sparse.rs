//! Sparse non-negative feature vectors keyed by category.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::graph::NodeId;

/// Sorted `(dimension, weight)` pairs. Zero weights are never stored.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SparseVector {
    entries: Vec<(NodeId, f64)>,
}

impl SparseVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vector, summing repeated dimensions and dropping zeros.
    /// Panics on non-finite weights.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (NodeId, f64)>) -> Self {
        let mut acc: BTreeMap<NodeId, f64> = BTreeMap::new();
        for (k, v) in pairs {
            assert!(v.is_finite(), "non-finite weight {v} for {k}");
            *acc.entry(k).or_insert(0.0) += v;
        }
        SparseVector {
            entries: acc.into_iter().filter(|&(_, v)| v != 0.0).collect(),
        }
    }

    /// Dense coordinates along dimensions `0..values.len()`.
    pub fn from_dense(values: &[f64]) -> Self {
        Self::from_pairs(
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| (NodeId::new(i as u32), v)),
        )
    }

    pub fn entries(&self) -> &[(NodeId, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, k: NodeId) -> f64 {
        self.entries
            .binary_search_by_key(&k, |&(key, _)| key)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j, mut s) = (0, 0, 0.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    s += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        s
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt()
    }

    /// `self + scale * other`.
    pub fn add_scaled(&self, other: &SparseVector, scale: f64) -> SparseVector {
        let (a, b) = (&self.entries, &other.entries);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            let (k, v) = match (a.get(i), b.get(j)) {
                (Some(&(ka, va)), Some(&(kb, vb))) if ka == kb => {
                    i += 1;
                    j += 1;
                    (ka, va + scale * vb)
                }
                (Some(&(ka, va)), Some(&(kb, _))) if ka < kb => {
                    i += 1;
                    (ka, va)
                }
                (Some(&(ka, va)), None) => {
                    i += 1;
                    (ka, va)
                }
                (_, Some(&(kb, vb))) => {
                    j += 1;
                    (kb, scale * vb)
                }
                (None, None) => unreachable!(),
            };
            if v != 0.0 {
                out.push((k, v));
            }
        }
        SparseVector { entries: out }
    }

    pub fn scaled(&self, s: f64) -> SparseVector {
        SparseVector {
            entries: self
                .entries
                .iter()
                .map(|&(k, v)| (k, v * s))
                .filter(|&(_, v)| v != 0.0)
                .collect(),
        }
    }

    /// Unit-length copy; the zero vector stays zero.
    pub fn normalized(&self) -> SparseVector {
        let n = self.norm();
        if n > 0.0 {
            self.scaled(1.0 / n)
        } else {
            self.clone()
        }
    }

    /// Arithmetic mean of a nonempty set of vectors.
    pub fn mean<'a>(vectors: impl IntoIterator<Item = &'a SparseVector>) -> SparseVector {
        let mut acc: BTreeMap<NodeId, f64> = BTreeMap::new();
        let mut count = 0usize;
        for v in vectors {
            count += 1;
            for &(k, w) in &v.entries {
                *acc.entry(k).or_insert(0.0) += w;
            }
        }
        assert!(count > 0, "mean of no vectors");
        let inv = 1.0 / count as f64;
        SparseVector {
            entries: acc
                .into_iter()
                .map(|(k, v)| (k, v * inv))
                .filter(|&(_, v)| v != 0.0)
                .collect(),
        }
    }
}

/// `1 - cos(a, b)`, in `[0, 2]`. A zero vector is at distance 1 from
/// everything, itself included.
pub fn cosine_distance(a: &SparseVector, b: &SparseVector) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - a.dot(b) / (na * nb)).clamp(0.0, 2.0)
}
