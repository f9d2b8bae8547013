//! Evaluation metrics for filtering, clustering and labeling, plus the
//! neighborhood-overlap statistics that motivate reuse.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::graph::{KnowledgeGraph, Neighborhood, NodeId};
use crate::scheduler::overlap_jaccard;
use crate::sparse::{cosine_distance, SparseVector};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("need at least two clusters, got {0}")]
    TooFewClusters(usize),
    #[error("cluster {0} is empty")]
    EmptyCluster(usize),
    #[error("ground truth is empty")]
    EmptyTruth,
    #[error("cutoff {k} exceeds ordering length {n}")]
    CutoffTooLarge { k: usize, n: usize },
    #[error("invalid range [{s}, {t}] for length {n}")]
    InvalidRange { s: usize, t: usize, n: usize },
    #[error("every term in the range has a zero reference value")]
    AllTermsSkipped,
    #[error("missing judgments for {}", .0.iter().map(|(c, e)| format!("{c}/{e}")).collect::<Vec<_>>().join(", "))]
    MissingJudgments(Vec<(String, String)>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ValidIndex {
    pub inter: f64,
    pub intra: f64,
    /// `inter / intra`; `+inf` when every cluster is a single point.
    pub valid: f64,
}

/// Mean pairwise distance between cluster means over mean member-to-mean
/// distance.
pub fn valid_index(clusters: &[Vec<SparseVector>]) -> Result<ValidIndex, MetricError> {
    let k = clusters.len();
    if k < 2 {
        return Err(MetricError::TooFewClusters(k));
    }
    if let Some(i) = clusters.iter().position(Vec::is_empty) {
        return Err(MetricError::EmptyCluster(i));
    }
    let means: Vec<SparseVector> = clusters.iter().map(SparseVector::mean).collect();
    let mut inter = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            inter += cosine_distance(&means[i], &means[j]);
        }
    }
    inter *= 2.0 / (k * (k - 1)) as f64;
    let intra = clusters
        .iter()
        .zip(&means)
        .map(|(c, m)| c.iter().map(|e| cosine_distance(m, e)).sum::<f64>() / c.len() as f64)
        .sum::<f64>()
        / k as f64;
    let valid = if intra > 0.0 {
        inter / intra
    } else {
        f64::INFINITY
    };
    Ok(ValidIndex {
        inter,
        intra,
        valid,
    })
}

/// Share of the truth set found among the first `k` entries of `ordering`.
pub fn m_at_k(ordering: &[NodeId], truth: &BTreeSet<NodeId>, k: usize) -> Result<f64, MetricError> {
    if truth.is_empty() {
        return Err(MetricError::EmptyTruth);
    }
    if k > ordering.len() {
        return Err(MetricError::CutoffTooLarge {
            k,
            n: ordering.len(),
        });
    }
    let hits = ordering[..k].iter().filter(|e| truth.contains(e)).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// `M@K` for every `K` in `0..=n`.
pub fn m_at_k_curve(
    ordering: &[NodeId],
    truth: &BTreeSet<NodeId>,
) -> Result<Vec<f64>, MetricError> {
    if truth.is_empty() {
        return Err(MetricError::EmptyTruth);
    }
    let mut out = Vec::with_capacity(ordering.len() + 1);
    let mut hits = 0usize;
    out.push(0.0);
    for e in ordering {
        hits += usize::from(truth.contains(e));
        out.push(hits as f64 / truth.len() as f64);
    }
    Ok(out)
}

/// Curve of the ideal ordering that lists all `truth` entities first.
pub fn truth_curve(truth_size: usize, n: usize) -> Result<Vec<f64>, MetricError> {
    if truth_size == 0 {
        return Err(MetricError::EmptyTruth);
    }
    Ok((0..=n)
        .map(|k| k.min(truth_size) as f64 / truth_size as f64)
        .collect())
}

/// Mean of `curve[K] / reference[K]` for `K` in `s..=t`, skipping cutoffs
/// where the reference is zero.
pub fn closeness(curve: &[f64], reference: &[f64], s: usize, t: usize) -> Result<f64, MetricError> {
    let n = curve.len().min(reference.len()).saturating_sub(1);
    if s < 1 || s > t || t > n {
        return Err(MetricError::InvalidRange { s, t, n });
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for k in s..=t {
        if reference[k] > 0.0 {
            sum += curve[k] / reference[k];
            count += 1;
        }
    }
    if count == 0 {
        return Err(MetricError::AllTermsSkipped);
    }
    Ok(sum / count as f64)
}

/// Mean over clusters of the fraction of members judged to fit the label.
pub fn precision_pcl(
    clusters: &[(String, Vec<String>)],
    judgments: &HashMap<(String, String), bool>,
) -> Result<f64, MetricError> {
    if clusters.is_empty() {
        return Ok(0.0);
    }
    let mut missing = Vec::new();
    let mut total = 0.0;
    for (id, members) in clusters {
        let mut matched = 0usize;
        for m in members {
            match judgments.get(&(id.clone(), m.clone())) {
                Some(true) => matched += 1,
                Some(false) => {}
                None => missing.push((id.clone(), m.clone())),
            }
        }
        if !members.is_empty() {
            total += matched as f64 / members.len() as f64;
        }
    }
    if !missing.is_empty() {
        return Err(MetricError::MissingJudgments(missing));
    }
    Ok(total / clusters.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverlapReport {
    /// Per article: the largest share of its neighborhood found in the
    /// neighborhood of one of its linked entities.
    pub max_overlap: BTreeMap<NodeId, f64>,
    /// `(x, fraction of articles with max overlap <= x)` for x = 0.0, 0.1, .., 1.0
    pub cdf: Vec<(f64, f64)>,
    /// `(k, mean overlap between an article and its k-hop neighbors)`
    pub khop: Vec<(usize, f64)>,
}

/// Cumulative share of `values` at or below each tenth in `[0, 1]`.
pub fn tenth_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    (0..=10)
        .map(|i| {
            let x = i as f64 / 10.0;
            let frac = if values.is_empty() {
                0.0
            } else {
                values.iter().filter(|&&v| v <= x + 1e-12).count() as f64 / values.len() as f64
            };
            (x, frac)
        })
        .collect()
}

pub fn overlap_distributions(
    g: &KnowledgeGraph,
    mode: Neighborhood,
    max_k: usize,
) -> OverlapReport {
    let articles: Vec<NodeId> = g.articles().collect();
    let max_overlap: BTreeMap<NodeId, f64> = articles
        .iter()
        .map(|&a| {
            let best = g
                .linked_entities(a)
                .iter()
                .map(|&v| overlap_jaccard(g, v, a, mode))
                .fold(0.0, f64::max);
            (a, best)
        })
        .collect();
    let values: Vec<f64> = max_overlap.values().copied().collect();
    let cdf = tenth_cdf(&values);

    let mut sums = vec![(0.0, 0usize); max_k + 1];
    for &s in &articles {
        let mut dist: HashMap<NodeId, usize> = HashMap::from([(s, 0)]);
        let mut queue = VecDeque::from([s]);
        while let Some(x) = queue.pop_front() {
            let d = dist[&x];
            if d == max_k {
                continue;
            }
            for &y in g.neighbors(x, mode) {
                if let Entry::Vacant(slot) = dist.entry(y) {
                    slot.insert(d + 1);
                    queue.push_back(y);
                    let slot = &mut sums[d + 1];
                    slot.0 += overlap_jaccard(g, y, s, mode);
                    slot.1 += 1;
                }
            }
        }
    }
    let khop = sums
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &(_, c))| c > 0)
        .map(|(k, &(s, c))| (k, s / c as f64))
        .collect();
    OverlapReport {
        max_overlap,
        cdf,
        khop,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().map(|&i| NodeId::new(i)).collect()
    }

    #[test]
    fn valid_index_cases() {
        let v = |d: &[f64]| SparseVector::from_dense(d);
        // two orthogonal singletons: inter 1, intra 0
        let r = valid_index(&[vec![v(&[1.0, 0.0])], vec![v(&[0.0, 1.0])]]).unwrap();
        assert_eq!((r.inter, r.intra, r.valid), (1.0, 0.0, f64::INFINITY));
        assert_eq!(
            valid_index(&[vec![v(&[1.0])]]),
            Err(MetricError::TooFewClusters(1))
        );
        assert_eq!(
            valid_index(&[vec![v(&[1.0])], vec![]]),
            Err(MetricError::EmptyCluster(1))
        );
    }

    #[test]
    fn m_at_k_cases() {
        let order = ids(&[1, 2, 3, 4]);
        let truth: BTreeSet<NodeId> = ids(&[1, 2]).into_iter().collect();
        assert_eq!(m_at_k(&order, &truth, 4).unwrap(), 1.0);
        assert_eq!(m_at_k(&order, &truth, 0).unwrap(), 0.0);
        assert_eq!(m_at_k(&order, &truth, 2).unwrap(), 1.0);
        assert_eq!(
            m_at_k(&order, &BTreeSet::new(), 2),
            Err(MetricError::EmptyTruth)
        );
        assert!(m_at_k(&order, &truth, 5).is_err());
        assert_eq!(
            m_at_k_curve(&order, &truth).unwrap(),
            vec![0.0, 0.5, 1.0, 1.0, 1.0]
        );
    }

    #[test]
    fn closeness_cases() {
        let truth: BTreeSet<NodeId> = ids(&[1, 2, 3]).into_iter().collect();
        let perfect = ids(&[1, 2, 3, 4, 5, 6]);
        let reference = truth_curve(3, 6).unwrap();
        let curve = m_at_k_curve(&perfect, &truth).unwrap();
        assert_eq!(closeness(&curve, &reference, 1, 6).unwrap(), 1.0);
        let reversed: Vec<NodeId> = perfect.iter().rev().copied().collect();
        let rc = m_at_k_curve(&reversed, &truth).unwrap();
        assert!(closeness(&rc, &reference, 1, 6).unwrap() < 1.0);
        // ordering 1,4,2,5,3,6: curve 1/3,1/3,2/3,2/3,1,1 over reference 1/3,2/3,1,1,1,1
        let mixed = ids(&[1, 4, 2, 5, 3, 6]);
        let mc = m_at_k_curve(&mixed, &truth).unwrap();
        let want = (1.0 + 0.5 + 2.0 / 3.0 + 2.0 / 3.0 + 1.0 + 1.0) / 6.0;
        assert!((closeness(&mc, &reference, 1, 6).unwrap() - want).abs() < 1e-12);
        assert!(closeness(&mc, &reference, 0, 6).is_err());
        assert_eq!(
            closeness(&[0.0, 0.0], &[0.0, 0.0], 1, 1),
            Err(MetricError::AllTermsSkipped)
        );
    }

    #[test]
    fn precision_cases() {
        let clusters = vec![
            ("a#0".to_string(), vec!["x".to_string(), "y".to_string()]),
            (
                "a#1".to_string(),
                ["p", "q", "r", "s"].map(String::from).to_vec(),
            ),
        ];
        let mut j = HashMap::new();
        for (c, e, v) in [
            ("a#0", "x", true),
            ("a#0", "y", false),
            ("a#1", "p", true),
            ("a#1", "q", true),
            ("a#1", "r", true),
        ] {
            j.insert((c.to_string(), e.to_string()), v);
        }
        assert!(matches!(
            precision_pcl(&clusters, &j),
            Err(MetricError::MissingJudgments(m)) if m == vec![("a#1".to_string(), "s".to_string())]
        ));
        j.insert(("a#1".into(), "s".into()), false);
        assert_eq!(precision_pcl(&clusters, &j).unwrap(), 0.625);
        for v in j.values_mut() {
            *v = true;
        }
        assert_eq!(precision_pcl(&clusters, &j).unwrap(), 1.0);
    }

    #[test]
    fn clique_and_star_overlap() {
        let mut b = GraphBuilder::new();
        let names = ["a", "b", "c", "d"];
        for n in names {
            b.entity(n);
        }
        for x in names {
            for y in names {
                if x != y {
                    b.link(x, y);
                }
            }
        }
        let g = b.build().unwrap();
        let r = overlap_distributions(&g, Neighborhood::Out, 2);
        assert!(r
            .max_overlap
            .values()
            .all(|&v| (v - 2.0 / 3.0).abs() < 1e-12));
        assert_eq!(r.cdf[6].1, 0.0);
        assert_eq!(r.cdf[7].1, 1.0);
        assert_eq!(r.khop.len(), 1);
        assert!((r.khop[0].1 - 2.0 / 3.0).abs() < 1e-12);

        // star: the hub links four leaves, each leaf links back to the hub
        // and to the common entity z
        let mut b = GraphBuilder::new();
        b.entity("hub").entity("z");
        for l in ["l1", "l2", "l3", "l4"] {
            b.entity(l).link("hub", l).link(l, "hub").link(l, "z");
        }
        let g = b.build().unwrap();
        let r = overlap_distributions(&g, Neighborhood::Out, 2);
        assert_eq!(r.max_overlap[&g.id("hub").unwrap()], 0.0);
        assert_eq!(r.max_overlap[&g.id("l1").unwrap()], 0.0);
        assert_eq!(r.cdf[0].1, 1.0);
        // two hops from a leaf reach the other leaves, which share both neighbors
        let two = r.khop.iter().find(|(k, _)| *k == 2).unwrap().1;
        assert!(two > 0.0);
    }
}
