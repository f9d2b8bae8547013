//! Position-aware rank aggregation for separating an article's related linked
//! entities from noise.
//!
//! Two rankings of the linked entities are combined: `r1` orders by PMI with
//! the article, `r2` by weighted Jaccard. Each entity gets its own mixing
//! weight `alpha = 1 / (1 + (r1 / (n - r2))^-beta)` and the score
//! `alpha * r1 + (1 - alpha) * r2`, which always lies in `[1, n]`. Scores are
//! mapped linearly onto `[0, 1]`; anything above the threshold is noise.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{CoocStats, KnowledgeGraph, NodeId};
use crate::relatedness::{pmi, wjc, DEFAULT_PMI_FLOOR};

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("cannot rank an empty set")]
    EmptyRanking,
    #[error("invalid aggregation config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Equal values are ordered by id.
    #[default]
    Lexicographic,
    /// Equal values keep their input order.
    InputOrder,
}

/// A bijection from items to positions `1..=n`, position 1 being the most
/// related.
#[derive(Clone, Debug, PartialEq)]
pub struct Ranking<K: Eq + Hash> {
    order: Vec<K>,
    positions: HashMap<K, usize>,
}

impl<K: Eq + Hash + Clone> Ranking<K> {
    /// Builds a ranking from an explicit best-first order.
    pub fn from_order(order: Vec<K>) -> Result<Self, FilterError> {
        if order.is_empty() {
            return Err(FilterError::EmptyRanking);
        }
        let positions: HashMap<K, usize> = order
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i + 1))
            .collect();
        assert_eq!(
            positions.len(),
            order.len(),
            "ranking items must be distinct"
        );
        Ok(Ranking { order, positions })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn position(&self, k: &K) -> Option<usize> {
        self.positions.get(k).copied()
    }

    /// Items best-first.
    pub fn order(&self) -> &[K] {
        &self.order
    }

    pub fn top(&self, k: usize) -> &[K] {
        &self.order[..k.min(self.order.len())]
    }
}

/// Ranks items so the best value gets position 1. NaN values rank last.
pub fn rank_by<K: Ord + Hash + Clone>(
    values: &[(K, f64)],
    higher_is_better: bool,
    tie_break: TieBreak,
) -> Result<Ranking<K>, FilterError> {
    if values.is_empty() {
        return Err(FilterError::EmptyRanking);
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ka, va) = &values[a];
        let (kb, vb) = &values[b];
        let by_value = match (va.is_nan(), vb.is_nan()) {
            (true, true) => std::cmp::Ordering::Equal,
            (true, false) => std::cmp::Ordering::Greater,
            (false, true) => std::cmp::Ordering::Less,
            (false, false) if higher_is_better => vb.total_cmp(va),
            (false, false) => va.total_cmp(vb),
        };
        by_value.then_with(|| match tie_break {
            TieBreak::Lexicographic => ka.cmp(kb),
            TieBreak::InputOrder => a.cmp(&b),
        })
    });
    Ranking::from_order(idx.into_iter().map(|i| values[i].0.clone()).collect())
}

/// Mixing weight on `r1`. When `r2 == n` the ratio is infinite and the limit
/// value 1 is returned.
pub fn alpha(r1: usize, r2: usize, n: usize, beta: f64) -> f64 {
    if r2 >= n {
        return 1.0;
    }
    let ratio = r1 as f64 / (n - r2) as f64;
    1.0 / (1.0 + ratio.powf(-beta))
}

pub fn aggregate_score(r1: usize, r2: usize, n: usize, beta: f64) -> f64 {
    let a = alpha(r1, r2, n, beta);
    a * r1 as f64 + (1.0 - a) * r2 as f64
}

/// Closed form of [`aggregate_score`] for `beta = 1`.
pub fn aggregate_score_beta1(r1: usize, r2: usize, n: usize) -> f64 {
    let (r1, r2, n) = (r1 as f64, r2 as f64, n as f64);
    (n * r2 + r1 * r1 - r2 * r2) / (n - r2 + r1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationConfig {
    pub beta: f64,
    /// Normalized score above which an entity is noise.
    pub threshold: f64,
    pub tie_break: TieBreak,
    /// PMI assigned to pairs that never co-occur.
    pub pmi_floor: f64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig {
            beta: 1.0,
            threshold: 0.77,
            tie_break: TieBreak::Lexicographic,
            pmi_floor: DEFAULT_PMI_FLOOR,
        }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(FilterError::InvalidConfig(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(FilterError::InvalidConfig(format!(
                "threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FilterResult {
    /// Related entities in article order.
    pub related: Vec<NodeId>,
    /// Noisy entities in article order.
    pub noise: Vec<NodeId>,
    /// Normalized aggregate score per linked entity.
    pub scores: BTreeMap<NodeId, f64>,
    /// Linked entities ordered by aggregate score, most related first.
    pub ordering: Vec<NodeId>,
}

/// Splits the linked entities of `article` into related and noise.
pub fn filter_noise(
    g: &KnowledgeGraph,
    stats: &CoocStats,
    article: NodeId,
    cfg: &AggregationConfig,
) -> FilterResult {
    let linked = g.linked_entities(article);
    let n = linked.len();
    if n == 0 {
        return FilterResult::default();
    }
    if n == 1 {
        return FilterResult {
            related: linked.to_vec(),
            noise: Vec::new(),
            scores: BTreeMap::from([(linked[0], 0.0)]),
            ordering: linked.to_vec(),
        };
    }
    let pmi_values: Vec<(NodeId, f64)> = linked
        .iter()
        .map(|&e| (e, pmi(stats, article, e, cfg.pmi_floor).value))
        .collect();
    let wjc_values: Vec<(NodeId, f64)> = linked
        .iter()
        .map(|&e| (e, wjc(g, article, e).value))
        .collect();
    let r1 = rank_by(&pmi_values, true, cfg.tie_break).expect("nonempty");
    let r2 = rank_by(&wjc_values, true, cfg.tie_break).expect("nonempty");

    let mut raw: Vec<(NodeId, f64)> = Vec::with_capacity(n);
    let mut scores = BTreeMap::new();
    let (mut related, mut noise) = (Vec::new(), Vec::new());
    for &e in linked {
        let p1 = r1.position(&e).expect("ranked");
        let p2 = r2.position(&e).expect("ranked");
        let score = aggregate_score(p1, p2, n, cfg.beta);
        let normalized = ((score - 1.0) / (n - 1) as f64).clamp(0.0, 1.0);
        raw.push((e, score));
        scores.insert(e, normalized);
        if normalized > cfg.threshold {
            noise.push(e);
        } else {
            related.push(e);
        }
    }
    let ordering = rank_by(&raw, false, cfg.tie_break)
        .expect("nonempty")
        .order()
        .to_vec();
    FilterResult {
        related,
        noise,
        scores,
        ordering,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_by_direction_and_ties() {
        let r = rank_by(&[("a", 0.9), ("b", 0.1)], true, TieBreak::Lexicographic).unwrap();
        assert_eq!(r.position(&"a"), Some(1));
        assert_eq!(r.position(&"b"), Some(2));
        let r = rank_by(
            &[("c", 1.0), ("a", 1.0), ("b", 1.0)],
            true,
            TieBreak::Lexicographic,
        )
        .unwrap();
        assert_eq!(r.order(), &["a", "b", "c"]);
        let r = rank_by(&[("c", 1.0), ("a", 1.0)], true, TieBreak::InputOrder).unwrap();
        assert_eq!(r.order(), &["c", "a"]);
        let r = rank_by(&[("only", -4.0)], false, TieBreak::Lexicographic).unwrap();
        assert_eq!(r.position(&"only"), Some(1));
        let empty: [(&str, f64); 0] = [];
        assert_eq!(
            rank_by(&empty, true, TieBreak::Lexicographic),
            Err(FilterError::EmptyRanking)
        );
        let r = rank_by(
            &[("x", f64::NAN), ("y", -1.0)],
            true,
            TieBreak::Lexicographic,
        )
        .unwrap();
        assert_eq!(r.order(), &["y", "x"]);
    }

    #[test]
    fn alpha_cases() {
        assert!((alpha(5, 5, 10, 1.0) - 0.5).abs() < 1e-15);
        assert!((alpha(80, 90, 100, 1.0) - 8.0 / 9.0).abs() < 1e-15);
        assert!(alpha(80, 90, 100, 200.0) > 1.0 - 1e-12);
        assert_eq!(alpha(3, 10, 10, 1.0), 1.0);
    }

    #[test]
    fn aggregate_score_dual_evaluation() {
        for &(r1, r2, n, expected) in &[(80, 90, 100, 7300.0 / 90.0), (10, 50, 100, 2600.0 / 60.0)]
        {
            let a = aggregate_score(r1, r2, n, 1.0);
            let b = aggregate_score_beta1(r1, r2, n);
            assert!((a - expected).abs() < 1e-9, "{a} vs {expected}");
            assert!((b - expected).abs() < 1e-9);
        }
        for k in 1..=7 {
            assert!((aggregate_score(k, k, 7, 2.5) - k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn score_stays_within_its_ranks() {
        for n in 1..=60 {
            for r1 in 1..=n {
                for r2 in 1..=n {
                    let s = aggregate_score(r1, r2, n, 1.0);
                    let lo = r1.min(r2) as f64;
                    let hi = r1.max(r2) as f64;
                    assert!(s >= lo - 1e-9 && s <= hi + 1e-9);
                }
            }
        }
    }

    // The aggregate is not monotone in r1 for fixed r2: with r2 close to n the
    // weight on r1 grows quickly enough that a worse r1 can lower the score.
    // The sign of score(r1 + 1) - score(r1) follows the sign of
    // r1^2 + 2 r1 (n - r2) - (n - r2) r2, the derivative's numerator.
    #[test]
    fn score_is_not_monotone_in_r1_near_the_tail() {
        let (n, r2) = (100, 99);
        assert!((aggregate_score(1, r2, n, 1.0) - 50.0).abs() < 1e-12);
        assert!(aggregate_score(2, r2, n, 1.0) < aggregate_score(1, r2, n, 1.0));

        for n in 2..=120usize {
            for r2 in 1..n {
                let d = (n - r2) as f64;
                for r1 in 1..n {
                    let x = r1 as f64;
                    let slope_at = |x: f64| x * x + 2.0 * x * d - d * r2 as f64;
                    let step =
                        aggregate_score(r1 + 1, r2, n, 1.0) - aggregate_score(r1, r2, n, 1.0);
                    if slope_at(x) >= 0.0 {
                        assert!(step >= -1e-9, "n={n} r1={r1} r2={r2}");
                    }
                    if slope_at(x + 1.0) < 0.0 {
                        assert!(step < 1e-9, "n={n} r1={r1} r2={r2}");
                    }
                }
            }
        }
    }

    #[test]
    fn equal_ranks_give_equal_scores() {
        assert_eq!(
            aggregate_score(4, 9, 20, 1.3),
            aggregate_score(4, 9, 20, 1.3)
        );
    }

    #[test]
    fn config_validation() {
        assert!(AggregationConfig::default().validate().is_ok());
        let bad = AggregationConfig {
            beta: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AggregationConfig {
            threshold: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
