//! G-means: recursive 2-means bi-partition that keeps a group whole when its
//! projection onto the line between the two sub-centers looks Gaussian under
//! an Anderson-Darling test.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::graph::NodeId;
use crate::sparse::{cosine_distance, SparseVector};

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("invalid cluster config: {0}")]
    InvalidConfig(String),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub significance: f64,
    pub max_iter: usize,
    pub rng_seed: u64,
    /// Groups smaller than this are never split.
    pub min_cluster_size: usize,
    /// Groups smaller than this skip the normality test and stay whole.
    pub min_test_size: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            significance: 0.0001,
            max_iter: 5,
            rng_seed: 0,
            min_cluster_size: 2,
            min_test_size: 8,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if !(self.significance > 0.0 && self.significance < 0.5) {
            return Err(ClusterError::InvalidConfig(format!(
                "significance must lie in (0, 0.5), got {}",
                self.significance
            )));
        }
        if self.max_iter == 0 {
            return Err(ClusterError::InvalidConfig("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cluster {
    /// Sorted member ids.
    pub members: Vec<NodeId>,
    pub centroid: SparseVector,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub type Point = (NodeId, SparseVector);

fn cluster_of(points: &[Point], idx: &[usize]) -> Cluster {
    let mut members: Vec<NodeId> = idx.iter().map(|&i| points[i].0).collect();
    members.sort();
    Cluster {
        members,
        centroid: SparseVector::mean(idx.iter().map(|&i| &points[i].1)),
    }
}

/// Selection probabilities of the second seed given the first: proportional
/// to squared distance. `None` when every distance is zero.
pub fn kmeanspp_weights(points: &[Point], first: usize) -> Option<Vec<f64>> {
    let d2: Vec<f64> = points
        .iter()
        .map(|(_, v)| cosine_distance(&points[first].1, v).powi(2))
        .collect();
    let total: f64 = d2.iter().sum();
    (total > 0.0).then(|| d2.into_iter().map(|d| d / total).collect())
}

fn seed_pair(points: &[Point], idx: &[usize], rng: &mut impl Rng) -> (usize, usize) {
    let n = idx.len();
    let first = rng.gen_range(0..n);
    let d2: Vec<f64> = idx
        .iter()
        .map(|&i| cosine_distance(&points[idx[first]].1, &points[i].1).powi(2))
        .collect();
    let second = if d2.iter().sum::<f64>() > 0.0 {
        WeightedIndex::new(&d2)
            .expect("weights are finite and positive in total")
            .sample(rng)
    } else {
        (first + rng.gen_range(1..n)) % n
    };
    (idx[first], idx[second])
}

/// Two k-means++ seeds: the first uniform, the second weighted by squared
/// cosine distance from the first.
pub fn kmeanspp_pair(
    points: &[Point],
    rng: &mut impl Rng,
) -> Result<(NodeId, NodeId), ClusterError> {
    if points.len() < 2 {
        return Err(ClusterError::TooFewPoints {
            needed: 2,
            got: points.len(),
        });
    }
    let idx: Vec<usize> = (0..points.len()).collect();
    let (a, b) = seed_pair(points, &idx, rng);
    Ok((points[a].0, points[b].0))
}

/// Outcome of a 2-means run over point indices.
#[derive(Clone, Debug)]
pub struct TwoMeans {
    pub sides: [Vec<usize>; 2],
    pub centroids: [SparseVector; 2],
    pub iterations: usize,
    /// Total within-cluster cosine cost after each centroid update.
    pub costs: Vec<f64>,
}

fn assign(points: &[Point], idx: &[usize], c: &[SparseVector; 2]) -> Vec<u8> {
    idx.iter()
        .map(|&i| {
            let v = &points[i].1;
            u8::from(cosine_distance(v, &c[1]) < cosine_distance(v, &c[0]))
        })
        .collect()
}

fn split_by(idx: &[usize], side: &[u8]) -> [Vec<usize>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for (&i, &s) in idx.iter().zip(side) {
        out[s as usize].push(i);
    }
    out
}

fn repair_empty_side(points: &[Point], idx: &[usize], side: &mut [u8], c: &[SparseVector; 2]) {
    for empty in 0..2u8 {
        if side.iter().all(|&s| s != empty) {
            let full = 1 - empty;
            let far = (0..idx.len())
                .max_by(|&a, &b| {
                    let da = cosine_distance(&points[idx[a]].1, &c[full as usize]);
                    let db = cosine_distance(&points[idx[b]].1, &c[full as usize]);
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .expect("nonempty group");
            side[far] = empty;
        }
    }
}

fn cost(points: &[Point], sides: &[Vec<usize>; 2], c: &[SparseVector; 2]) -> f64 {
    sides
        .iter()
        .zip(c)
        .map(|(s, ci)| {
            s.iter()
                .map(|&i| cosine_distance(&points[i].1, ci))
                .sum::<f64>()
        })
        .sum()
}

/// Lloyd iterations with two centers over the points listed in `idx`.
pub fn two_means(
    points: &[Point],
    idx: &[usize],
    c1: &SparseVector,
    c2: &SparseVector,
    max_iter: usize,
) -> TwoMeans {
    let mut centroids = [c1.clone(), c2.clone()];
    let mut side = assign(points, idx, &centroids);
    let mut costs = Vec::new();
    let mut iterations = 0;
    if idx.len() >= 2 {
        for _ in 0..max_iter {
            iterations += 1;
            repair_empty_side(points, idx, &mut side, &centroids);
            let sides = split_by(idx, &side);
            centroids = [
                SparseVector::mean(sides[0].iter().map(|&i| &points[i].1)),
                SparseVector::mean(sides[1].iter().map(|&i| &points[i].1)),
            ];
            costs.push(cost(points, &sides, &centroids));
            let next = assign(points, idx, &centroids);
            if next == side {
                break;
            }
            side = next;
        }
        repair_empty_side(points, idx, &mut side, &centroids);
    }
    let sides = split_by(idx, &side);
    for (k, s) in sides.iter().enumerate() {
        if !s.is_empty() {
            centroids[k] = SparseVector::mean(s.iter().map(|&i| &points[i].1));
        }
    }
    TwoMeans {
        sides,
        centroids,
        iterations,
        costs,
    }
}

/// 2-means over all `points` from the given starting centers.
pub fn kmeans2(
    points: &[Point],
    c1: &SparseVector,
    c2: &SparseVector,
    max_iter: usize,
) -> Result<(Cluster, Cluster), ClusterError> {
    if points.len() < 2 {
        return Err(ClusterError::TooFewPoints {
            needed: 2,
            got: points.len(),
        });
    }
    let idx: Vec<usize> = (0..points.len()).collect();
    let r = two_means(points, &idx, c1, c2, max_iter);
    Ok((
        cluster_of(points, &r.sides[0]),
        cluster_of(points, &r.sides[1]),
    ))
}

/// Upper-tail critical values of the corrected statistic when mean and
/// variance are estimated from the sample.
const CRITICAL_VALUES: [(f64, f64); 6] = [
    (0.15, 0.576),
    (0.10, 0.656),
    (0.05, 0.787),
    (0.025, 0.918),
    (0.01, 1.092),
    (0.0001, 1.8692),
];

/// Critical value at `significance`, interpolated linearly in `ln(significance)`
/// and clamped to the ends of the table.
pub fn critical_value(significance: f64) -> f64 {
    let (first, last) = (
        CRITICAL_VALUES[0],
        CRITICAL_VALUES[CRITICAL_VALUES.len() - 1],
    );
    if significance >= first.0 {
        return first.1;
    }
    if significance <= last.0 {
        return last.1;
    }
    let x = significance.ln();
    for w in CRITICAL_VALUES.windows(2) {
        let ((a0, v0), (a1, v1)) = (w[0], w[1]);
        if significance <= a0 && significance >= a1 {
            let t = (x - a0.ln()) / (a1.ln() - a0.ln());
            return v0 + t * (v1 - v0);
        }
    }
    unreachable!("table covers the clamped range")
}

/// A² of the sample against a normal with the sample's own mean and
/// (n-1)-variance, uncorrected. `None` for fewer than two values or zero spread.
pub fn anderson_darling(sample: &[f64]) -> Option<f64> {
    let n = sample.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mean = sample.iter().sum::<f64>() / nf;
    let var = sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    if sd.is_nan() || sd <= 0.0 || sd.is_infinite() {
        return None;
    }
    let mut z: Vec<f64> = sample.iter().map(|x| (x - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let ln_cdf = |x: f64| std_normal.cdf(x).max(f64::MIN_POSITIVE).ln();
    let s: f64 = (0..n)
        .map(|i| (2 * i + 1) as f64 * (ln_cdf(z[i]) + ln_cdf(-z[n - 1 - i])))
        .sum();
    Some(-nf - s / nf)
}

/// Small-sample adjustment `A²(1 + 4/n - 25/n²)`.
pub fn corrected_statistic(a2: f64, n: usize) -> f64 {
    let nf = n as f64;
    a2 * (1.0 + 4.0 / nf - 25.0 / (nf * nf))
}

/// Projection of each vector onto the unit direction `c1 - c2`.
pub fn project<'a>(
    vectors: impl IntoIterator<Item = &'a SparseVector>,
    c1: &SparseVector,
    c2: &SparseVector,
) -> Option<Vec<f64>> {
    let dir = c1.add_scaled(c2, -1.0);
    if dir.norm() == 0.0 {
        return None;
    }
    let dir = dir.normalized();
    Some(vectors.into_iter().map(|v| v.dot(&dir)).collect())
}

/// `true` when the group should stay whole.
pub fn anderson_darling_split_test(
    vectors: &[&SparseVector],
    c1: &SparseVector,
    c2: &SparseVector,
    significance: f64,
    min_test_size: usize,
) -> bool {
    if vectors.len() < min_test_size.max(2) {
        return true;
    }
    let Some(proj) = project(vectors.iter().copied(), c1, c2) else {
        return true;
    };
    match anderson_darling(&proj) {
        None => true,
        Some(a2) => corrected_statistic(a2, proj.len()) <= critical_value(significance),
    }
}

fn split_seed(seed: u64, branch: u64) -> u64 {
    // splitmix64 finalizer over the parent seed and branch tag
    let mut z = seed ^ branch.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn all_coincide(points: &[Point], idx: &[usize]) -> bool {
    let first = &points[idx[0]].1;
    idx[1..].iter().all(|&i| {
        let v = &points[i].1;
        v == first || (first.norm() > 0.0 && v.norm() > 0.0 && cosine_distance(first, v) < 1e-12)
    })
}

const PARALLEL_SPLIT: usize = 256;

fn bipartition(
    points: &[Point],
    idx: Vec<usize>,
    seed: u64,
    cfg: &ClusterConfig,
) -> Vec<Vec<usize>> {
    if idx.len() < cfg.min_cluster_size.max(2) || all_coincide(points, &idx) {
        return vec![idx];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = seed_pair(points, &idx, &mut rng);
    let tm = two_means(points, &idx, &points[a].1, &points[b].1, cfg.max_iter);
    if tm.sides.iter().any(Vec::is_empty) {
        return vec![idx];
    }
    let vectors: Vec<&SparseVector> = idx.iter().map(|&i| &points[i].1).collect();
    if anderson_darling_split_test(
        &vectors,
        &tm.centroids[0],
        &tm.centroids[1],
        cfg.significance,
        cfg.min_test_size,
    ) {
        return vec![idx];
    }
    let [left, right] = tm.sides;
    let (ls, rs) = (split_seed(seed, 1), split_seed(seed, 2));
    let (mut l, r) = if idx.len() >= PARALLEL_SPLIT {
        rayon::join(
            || bipartition(points, left, ls, cfg),
            || bipartition(points, right, rs, cfg),
        )
    } else {
        (
            bipartition(points, left, ls, cfg),
            bipartition(points, right, rs, cfg),
        )
    };
    l.extend(r);
    l
}

/// Clusters `points` into groups that each pass the normality test. Output
/// clusters are ordered by their smallest member id.
pub fn gmeans_cluster(points: &[Point], cfg: &ClusterConfig) -> Result<Vec<Cluster>, ClusterError> {
    cfg.validate()?;
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let groups = bipartition(points, (0..points.len()).collect(), cfg.rng_seed, cfg);
    let mut clusters: Vec<Cluster> = groups.iter().map(|g| cluster_of(points, g)).collect();
    clusters.sort_by(|a, b| a.members[0].cmp(&b.members[0]));
    Ok(clusters)
}
