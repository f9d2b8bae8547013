//! Pairwise relatedness between entities: PMI over co-occurrence, the
//! idf-weighted Jaccard coefficient over link neighborhoods, and the
//! link-based `sr` distance used to measure how noisy articles are.

use serde::Serialize;
use thiserror::Error;

use crate::graph::{CoocStats, KnowledgeGraph, Neighborhood, NodeId};

/// PMI reported for pairs that never co-occur.
pub const DEFAULT_PMI_FLOOR: f64 = -30.0;

/// `sr` distance above which a link counts as noise.
pub const DEFAULT_NOISE_THRESHOLD: f64 = 0.53;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Measure {
    Pmi,
    Wjc,
    Sr,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RelatednessScore {
    pub value: f64,
    pub measure: Measure,
}

#[derive(Debug, Error, PartialEq)]
pub enum RelatednessError {
    #[error("sr is undefined: min(|A|, |B|) = |W| = {0}")]
    DegenerateDenominator(usize),
}

/// `ln(p(x,y) / (p(x) p(y)))`; `floor` when the pair never co-occurs.
pub fn pmi(stats: &CoocStats, x: NodeId, y: NodeId, floor: f64) -> RelatednessScore {
    let value = pmi_from_counts(
        stats.pair_count(x, y) as u64,
        stats.occurrence_count(x),
        stats.occurrence_count(y),
        stats.total_pairs(),
    )
    .unwrap_or(floor)
    .max(floor);
    RelatednessScore {
        value,
        measure: Measure::Pmi,
    }
}

fn pmi_from_counts(pair: u64, occ_x: u64, occ_y: u64, total: u64) -> Option<f64> {
    if pair == 0 || occ_x == 0 || occ_y == 0 || total == 0 {
        return None;
    }
    let total = total as f64;
    let p_xy = pair as f64 / total;
    let p_x = occ_x as f64 / total;
    let p_y = occ_y as f64 / total;
    Some((p_xy / (p_x * p_y)).ln())
}

/// BM25-style inverse link frequency, clamped at zero.
pub fn idf_link(g: &KnowledgeGraph, e: NodeId) -> f64 {
    idf_from_counts(g.article_count(), g.link_count(e) as usize)
}

pub fn idf_from_counts(articles: usize, linked_from: usize) -> f64 {
    let n = articles as f64;
    let ne = linked_from as f64;
    ((n - ne + 0.5) / (ne + 0.5)).ln().max(0.0)
}

/// Weighted Jaccard coefficient of the two out-neighborhoods, weighting each
/// shared entity by [`idf_link`]. Zero when the union carries no weight.
pub fn wjc(g: &KnowledgeGraph, x: NodeId, y: NodeId) -> RelatednessScore {
    let value = weighted_jaccard(
        g.neighbors(x, Neighborhood::Out),
        g.neighbors(y, Neighborhood::Out),
        |e| idf_link(g, e),
    );
    RelatednessScore {
        value,
        measure: Measure::Wjc,
    }
}

/// Weighted Jaccard over two sorted id slices.
pub fn weighted_jaccard(a: &[NodeId], b: &[NodeId], weight: impl Fn(NodeId) -> f64) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (mut inter, mut union) = (0.0, 0.0);
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) if x == y => {
                let w = weight(x);
                inter += w;
                union += w;
                i += 1;
                j += 1;
            }
            (Some(&x), Some(&y)) if x < y => {
                union += weight(x);
                i += 1;
            }
            (Some(&x), None) => {
                union += weight(x);
                i += 1;
            }
            (_, Some(&y)) => {
                union += weight(y);
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Size of the intersection of two sorted slices.
pub fn intersection_len(a: &[NodeId], b: &[NodeId]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Link-based distance between two articles; larger means less related.
/// An empty overlap gives `+inf`.
pub fn sr(g: &KnowledgeGraph, a: NodeId, b: NodeId) -> Result<RelatednessScore, RelatednessError> {
    let na = g.neighbors(a, Neighborhood::Out);
    let nb = g.neighbors(b, Neighborhood::Out);
    let value = sr_from_counts(
        na.len(),
        nb.len(),
        intersection_len(na, nb),
        g.article_count(),
    )?;
    Ok(RelatednessScore {
        value,
        measure: Measure::Sr,
    })
}

pub fn sr_from_counts(
    a_len: usize,
    b_len: usize,
    common: usize,
    articles: usize,
) -> Result<f64, RelatednessError> {
    if common == 0 {
        return Ok(f64::INFINITY);
    }
    let lo = a_len.min(b_len);
    let hi = a_len.max(b_len);
    let denom = (articles as f64).ln() - (lo as f64).ln();
    if denom <= 0.0 {
        return Err(RelatednessError::DegenerateDenominator(articles));
    }
    Ok(((hi as f64).ln() - (common as f64).ln()) / denom)
}

pub fn is_noise(sr_value: f64, threshold: f64) -> bool {
    sr_value > threshold
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

/// Per-article share of noisy links, binned over `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseHistogram {
    pub bins: Vec<HistogramBin>,
    /// Raw per-article fractions, in article order.
    pub samples: Vec<f64>,
}

impl NoiseHistogram {
    pub fn from_samples(samples: Vec<f64>, bins: usize) -> Self {
        let bins = bins.max(1);
        let width = 1.0 / bins as f64;
        let mut out: Vec<HistogramBin> = (0..bins)
            .map(|i| HistogramBin {
                low: i as f64 * width,
                high: (i + 1) as f64 * width,
                count: 0,
            })
            .collect();
        for &s in &samples {
            let idx = ((s / width).floor() as usize).min(bins - 1);
            out[idx].count += 1;
        }
        NoiseHistogram { bins: out, samples }
    }

    /// Fraction of articles whose noisy share is at most each bin's upper edge.
    pub fn cumulative(&self) -> Vec<(f64, f64)> {
        let total = self.samples.len().max(1) as f64;
        let mut acc = 0;
        self.bins
            .iter()
            .map(|b| {
                acc += b.count;
                (b.high, acc as f64 / total)
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_low,bin_high,article_count\n");
        for b in &self.bins {
            s.push_str(&format!("{:.2},{:.2},{}\n", b.low, b.high, b.count));
        }
        s
    }
}

/// Fraction of links with `sr > threshold` for one article. Pairs whose `sr`
/// is undefined are not counted as noise.
pub fn noisy_fraction(g: &KnowledgeGraph, article: NodeId, threshold: f64) -> Option<f64> {
    let linked = g.linked_entities(article);
    if linked.is_empty() {
        return None;
    }
    let noisy = linked
        .iter()
        .filter(|&&b| matches!(sr(g, article, b), Ok(s) if is_noise(s.value, threshold)))
        .count();
    Some(noisy as f64 / linked.len() as f64)
}

/// Histogram over all articles with at least one link.
pub fn noise_distribution(g: &KnowledgeGraph, threshold: f64, bins: usize) -> NoiseHistogram {
    let samples = g
        .articles()
        .filter_map(|a| noisy_fraction(g, a, threshold))
        .collect();
    NoiseHistogram::from_samples(samples, bins)
}
