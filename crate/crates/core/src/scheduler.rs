//! Batch extraction with computation reuse.
//!
//! Articles whose linked-entity sets overlap are connected in an
//! entity-correlation graph (ECG). A maximum spanning forest of that graph
//! decides which article inherits clusters from which, and the forest is
//! processed level by level so each article only waits on its parent.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::gmeans::{gmeans_cluster, Cluster, ClusterConfig, ClusterError, Point};
use crate::graph::{CoocStats, DegreeMode, KnowledgeGraph, Neighborhood, NodeId};
use crate::labeler::{label_cluster, union_taxonomy, LabelError, LabeledCluster};
use crate::noise::{filter_noise, FilterResult};
use crate::relatedness::intersection_len;
use crate::sparse::SparseVector;
use crate::taxonomy::{feature_vector, TaxonomyCorpus};

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("brute force limited to {limit} nodes, got {got}")]
    TooManyNodes { limit: usize, got: usize },
    #[error("invalid ecg config: {0}")]
    InvalidConfig(String),
    #[error("clustering {article}: {source}")]
    Cluster {
        article: String,
        source: ClusterError,
    },
    #[error("labeling {article}: {source}")]
    Label { article: String, source: LabelError },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EcgConfig {
    /// Overlap an edge must exceed to be kept.
    pub tau: f64,
    pub neighborhood: Neighborhood,
    /// Degree used to pick each tree's root.
    pub degree: DegreeMode,
    /// Skip pairs whose degree bound already rules them out.
    pub prune: bool,
}

impl Default for EcgConfig {
    fn default() -> Self {
        EcgConfig {
            tau: 0.05,
            neighborhood: Neighborhood::Out,
            degree: DegreeMode::Total,
            prune: true,
        }
    }
}

impl EcgConfig {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        if !(self.tau >= 0.0 && self.tau < 1.0) {
            return Err(SchedulerError::InvalidConfig(format!(
                "tau must lie in [0, 1), got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// `|N(u) ∩ N(v)| / |N(v)|`, the share of `v`'s neighborhood already
/// present in `u`'s. Zero when `v` has no neighbors.
pub fn overlap_jaccard(g: &KnowledgeGraph, u: NodeId, v: NodeId, mode: Neighborhood) -> f64 {
    overlap_ratio(g.neighbors(u, mode), g.neighbors(v, mode))
}

fn overlap_ratio(nu: &[NodeId], nv: &[NodeId]) -> f64 {
    if nv.is_empty() {
        return 0.0;
    }
    intersection_len(nu, nv) as f64 / nv.len() as f64
}

/// Upper bound on `J(u→v)` from neighborhood sizes alone.
pub fn overlap_bound(nu: usize, nv: usize) -> f64 {
    if nv == 0 {
        return 0.0;
    }
    nu.min(nv) as f64 / nv as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EcgEdge {
    pub source: NodeId,
    pub target: NodeId,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EcgStats {
    pub candidates: usize,
    pub pruned: usize,
    pub intersections: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ecg {
    nodes: BTreeSet<NodeId>,
    edges: Vec<EcgEdge>,
    pub stats: EcgStats,
}

impl Ecg {
    pub fn from_edges(edges: impl IntoIterator<Item = EcgEdge>) -> Self {
        let mut edges: Vec<EcgEdge> = edges.into_iter().collect();
        edges.sort_by_key(|e| (e.source, e.target));
        edges.dedup_by_key(|e| (e.source, e.target));
        let nodes = edges.iter().flat_map(|e| [e.source, e.target]).collect();
        Ecg {
            nodes,
            edges,
            stats: EcgStats::default(),
        }
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    pub fn edges(&self) -> &[EcgEdge] {
        &self.edges
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn degree(&self, n: NodeId, mode: DegreeMode) -> usize {
        self.edges
            .iter()
            .filter(|e| e.source == n || (mode == DegreeMode::Total && e.target == n))
            .count()
    }

    /// Undirected view: each linked pair weighted by its larger direction.
    pub fn symmetric_weights(&self) -> BTreeMap<(NodeId, NodeId), f64> {
        let mut w: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
        for e in &self.edges {
            let key = (e.source.min(e.target), e.source.max(e.target));
            let slot = w.entry(key).or_insert(0.0);
            *slot = slot.max(e.weight);
        }
        w
    }
}

/// Keeps every hyperlink `u → v` whose overlap `J(u→v)` exceeds `tau`.
pub fn build_ecg(g: &KnowledgeGraph, cfg: &EcgConfig) -> Ecg {
    let mut stats = EcgStats::default();
    let mut edges = Vec::new();
    for u in g.articles() {
        let nu = g.neighbors(u, cfg.neighborhood);
        for &v in g.linked_entities(u) {
            stats.candidates += 1;
            let nv = g.neighbors(v, cfg.neighborhood);
            if cfg.prune && overlap_bound(nu.len(), nv.len()) <= cfg.tau {
                stats.pruned += 1;
                continue;
            }
            stats.intersections += 1;
            let weight = overlap_ratio(nu, nv);
            if weight > cfg.tau {
                edges.push(EcgEdge {
                    source: u,
                    target: v,
                    weight,
                });
            }
        }
    }
    let mut ecg = Ecg::from_edges(edges);
    ecg.stats = stats;
    ecg
}

#[derive(Clone, Debug, PartialEq)]
pub struct InheritanceTree {
    pub root: NodeId,
    /// child → (parent, weight of the connecting edge)
    pub parent: BTreeMap<NodeId, (NodeId, f64)>,
    pub level: BTreeMap<NodeId, usize>,
    /// Nodes in the order Prim attached them, root first.
    pub order: Vec<NodeId>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InheritanceForest {
    pub trees: Vec<InheritanceTree>,
}

impl InheritanceForest {
    pub fn weight(&self) -> f64 {
        self.trees
            .iter()
            .flat_map(|t| t.parent.values().map(|&(_, w)| w))
            .sum()
    }

    pub fn parent_of(&self, n: NodeId) -> Option<NodeId> {
        self.trees
            .iter()
            .find_map(|t| t.parent.get(&n).map(|&(p, _)| p))
    }

    /// Nodes of every tree grouped by depth.
    pub fn levels(&self) -> Vec<Vec<NodeId>> {
        let mut out: Vec<Vec<NodeId>> = Vec::new();
        for t in &self.trees {
            for (&n, &l) in &t.level {
                if out.len() <= l {
                    out.resize(l + 1, Vec::new());
                }
                out[l].push(n);
            }
        }
        for level in &mut out {
            level.sort();
        }
        out
    }
}

#[derive(PartialEq)]
struct Candidate {
    weight: f64,
    child: NodeId,
    parent: NodeId,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.weight
            .total_cmp(&other.weight)
            .then(other.child.cmp(&self.child))
            .then(other.parent.cmp(&self.parent))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Prim's algorithm on each connected component, rooted at the component's
/// highest-degree node (smallest id on ties), always attaching the heaviest
/// edge leaving the visited set.
pub fn prim_max_spanning(ecg: &Ecg, degree: DegreeMode) -> InheritanceForest {
    let sym = ecg.symmetric_weights();
    let mut adj: HashMap<NodeId, Vec<(NodeId, f64)>> = HashMap::new();
    for (&(a, b), &w) in &sym {
        adj.entry(a).or_default().push((b, w));
        adj.entry(b).or_default().push((a, w));
    }
    let mut roots: Vec<(usize, NodeId)> = ecg
        .nodes()
        .iter()
        .map(|&n| (ecg.degree(n, degree), n))
        .collect();
    roots.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut visited: BTreeSet<NodeId> = BTreeSet::new();
    let mut forest = InheritanceForest::default();
    for (_, root) in roots {
        if visited.contains(&root) {
            continue;
        }
        visited.insert(root);
        let mut tree = InheritanceTree {
            root,
            parent: BTreeMap::new(),
            level: BTreeMap::from([(root, 0)]),
            order: vec![root],
        };
        let mut heap = BinaryHeap::new();
        let push_from =
            |heap: &mut BinaryHeap<Candidate>, from: NodeId, visited: &BTreeSet<NodeId>| {
                for &(to, weight) in adj.get(&from).into_iter().flatten() {
                    if !visited.contains(&to) {
                        heap.push(Candidate {
                            weight,
                            child: to,
                            parent: from,
                        });
                    }
                }
            };
        push_from(&mut heap, root, &visited);
        while let Some(c) = heap.pop() {
            if !visited.insert(c.child) {
                continue;
            }
            let depth = tree.level[&c.parent] + 1;
            tree.parent.insert(c.child, (c.parent, c.weight));
            tree.level.insert(c.child, depth);
            tree.order.push(c.child);
            push_from(&mut heap, c.child, &visited);
        }
        forest.trees.push(tree);
    }
    forest
}

pub const BIO_NODE_LIMIT: usize = 10;

/// Best inheritance order: the heaviest directed path visiting every node
/// once, by exhaustive search over orders. Absent edges weigh zero.
pub fn bio_weight_bruteforce(ecg: &Ecg) -> Result<f64, SchedulerError> {
    let nodes: Vec<NodeId> = ecg.nodes().iter().copied().collect();
    let n = nodes.len();
    if n > BIO_NODE_LIMIT {
        return Err(SchedulerError::TooManyNodes {
            limit: BIO_NODE_LIMIT,
            got: n,
        });
    }
    let pos: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &x)| (x, i)).collect();
    let mut w = vec![vec![0.0; n]; n];
    for e in ecg.edges() {
        w[pos[&e.source]][pos[&e.target]] = e.weight;
    }
    fn extend(
        w: &[Vec<f64>],
        last: usize,
        used: &mut [bool],
        depth: usize,
        acc: f64,
        best: &mut f64,
    ) {
        if depth == w.len() {
            *best = best.max(acc);
            return;
        }
        for next in 0..w.len() {
            if !used[next] {
                used[next] = true;
                extend(w, next, used, depth + 1, acc + w[last][next], best);
                used[next] = false;
            }
        }
    }
    let mut best = 0.0;
    let mut used = vec![false; n];
    for start in 0..n {
        used[start] = true;
        extend(&w, start, &mut used, 1, 0.0, &mut best);
        used[start] = false;
    }
    Ok(best)
}

/// Clustering result of one article.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArticleResult {
    pub article: NodeId,
    pub clusters: Vec<LabeledCluster>,
    /// Entities that took their cluster from the parent article.
    pub inherited: usize,
    /// Entities clustered from scratch.
    pub fresh: usize,
}

impl ArticleResult {
    pub fn members(&self) -> BTreeSet<NodeId> {
        self.clusters
            .iter()
            .flat_map(|c| c.cluster.members.iter().copied())
            .collect()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Everything needed to cluster and label any article of one graph.
pub struct Extractor<'g> {
    g: &'g KnowledgeGraph,
    cfg: PipelineConfig,
    stats: CoocStats,
    corpus: TaxonomyCorpus,
    features: HashMap<NodeId, SparseVector>,
}

impl<'g> Extractor<'g> {
    /// Builds taxonomies and unit-length feature vectors for every linked
    /// entity of the graph.
    pub fn new(g: &'g KnowledgeGraph, cfg: &PipelineConfig) -> Self {
        let stats = CoocStats::from_graph(g);
        let linked: BTreeSet<NodeId> = g
            .articles()
            .flat_map(|a| g.linked_entities(a).iter().copied())
            .collect();
        let corpus = TaxonomyCorpus::build(g, linked.iter().copied(), &cfg.taxonomy);
        let features = corpus
            .taxonomies()
            .filter(|t| !t.nodes().is_empty())
            .map(|t| (t.root(), feature_vector(t, &corpus).normalized()))
            .collect();
        Extractor {
            g,
            cfg: cfg.clone(),
            stats,
            corpus,
            features,
        }
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        self.g
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn corpus(&self) -> &TaxonomyCorpus {
        &self.corpus
    }

    pub fn cooccurrence(&self) -> &CoocStats {
        &self.stats
    }

    pub fn feature(&self, e: NodeId) -> Option<&SparseVector> {
        self.features.get(&e)
    }

    pub fn filter(&self, article: NodeId) -> FilterResult {
        filter_noise(self.g, &self.stats, article, &self.cfg.aggregation)
    }

    /// Related linked entities that have at least one category in their
    /// taxonomy, sorted.
    pub fn clusterable(&self, article: NodeId) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = self
            .filter(article)
            .related
            .into_iter()
            .filter(|e| self.features.contains_key(e))
            .collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn seed_for(&self, article: NodeId) -> u64 {
        self.cfg.cluster.rng_seed ^ fnv1a(self.g.name(article).as_bytes())
    }

    /// Clusters and labels `entities` as linked entities of `article`.
    pub fn cluster_entities(
        &self,
        article: NodeId,
        entities: &[NodeId],
    ) -> Result<Vec<LabeledCluster>, SchedulerError> {
        let points: Vec<Point> = entities
            .iter()
            .map(|&e| (e, self.features[&e].clone()))
            .collect();
        let cfg = ClusterConfig {
            rng_seed: self.seed_for(article),
            ..self.cfg.cluster
        };
        let clusters = gmeans_cluster(&points, &cfg).map_err(|source| SchedulerError::Cluster {
            article: self.g.name(article).to_string(),
            source,
        })?;
        clusters
            .iter()
            .map(|c| {
                label_cluster(c, &self.corpus, &self.cfg.label).map_err(|source| {
                    SchedulerError::Label {
                        article: self.g.name(article).to_string(),
                        source,
                    }
                })
            })
            .collect()
    }

    pub fn cluster_direct(&self, article: NodeId) -> Result<ArticleResult, SchedulerError> {
        let entities = self.clusterable(article);
        let clusters = self.cluster_entities(article, &entities)?;
        Ok(ArticleResult {
            article,
            clusters: sorted(clusters),
            inherited: 0,
            fresh: entities.len(),
        })
    }

    fn relabeled(&self, members: Vec<NodeId>, like: &LabeledCluster) -> LabeledCluster {
        let centroid = SparseVector::mean(members.iter().map(|e| &self.features[e]));
        let coverage = union_taxonomy(members.iter().filter_map(|&m| self.corpus.taxonomy(m)))
            .ok()
            .and_then(|ct| ct.coverage(like.label).ok())
            .unwrap_or(0.0);
        LabeledCluster {
            cluster: Cluster { members, centroid },
            label: like.label,
            coverage,
            strategy: like.strategy,
        }
    }

    /// Clusters `child` starting from its parent's result: shared entities
    /// keep the parent's cluster and label, the rest are clustered fresh, and
    /// fresh clusters merge into inherited ones carrying the same label.
    pub fn inherit_and_cluster(
        &self,
        parent: &ArticleResult,
        child: NodeId,
    ) -> Result<ArticleResult, SchedulerError> {
        let own: BTreeSet<NodeId> = self.clusterable(child).into_iter().collect();
        let mut inherited: Vec<LabeledCluster> = Vec::new();
        let mut taken: BTreeSet<NodeId> = BTreeSet::new();
        for pc in &parent.clusters {
            let members: Vec<NodeId> = pc
                .cluster
                .members
                .iter()
                .copied()
                .filter(|e| own.contains(e))
                .collect();
            if !members.is_empty() {
                taken.extend(members.iter().copied());
                inherited.push(self.relabeled(members, pc));
            }
        }
        let rest: Vec<NodeId> = own.difference(&taken).copied().collect();
        let fresh = if rest.is_empty() {
            Vec::new()
        } else {
            self.cluster_entities(child, &rest)?
        };
        let mut merged: Vec<LabeledCluster> = Vec::with_capacity(inherited.len() + fresh.len());
        let mut absorbed: Vec<Vec<NodeId>> = vec![Vec::new(); inherited.len()];
        for f in fresh {
            match inherited.iter().position(|c| c.label == f.label) {
                Some(i) => absorbed[i].extend(f.cluster.members),
                None => merged.push(f),
            }
        }
        for (c, extra) in inherited.into_iter().zip(absorbed) {
            if extra.is_empty() {
                merged.push(c);
            } else {
                let mut members = c.cluster.members.clone();
                members.extend(extra);
                members.sort();
                merged.push(self.relabeled(members, &c));
            }
        }
        Ok(ArticleResult {
            article: child,
            clusters: sorted(merged),
            inherited: taken.len(),
            fresh: rest.len(),
        })
    }
}

fn sorted(mut clusters: Vec<LabeledCluster>) -> Vec<LabeledCluster> {
    clusters.sort_by(|a, b| a.cluster.members.cmp(&b.cluster.members));
    clusters
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeTiming {
    pub article: NodeId,
    pub level: usize,
    pub parent: Option<NodeId>,
    pub seconds: f64,
    /// Time of a from-scratch run of the same article, when measured.
    pub direct_seconds: Option<f64>,
    pub inherited: usize,
    pub fresh: usize,
}

impl NodeTiming {
    /// `(T_direct - T_reuse) / T_direct`.
    pub fn reuse_ratio(&self) -> Option<f64> {
        self.direct_seconds
            .filter(|&d| d > 0.0)
            .map(|d| (d - self.seconds) / d)
    }
}

#[derive(Clone, Debug, Default)]
pub struct BatchReport {
    pub timings: Vec<NodeTiming>,
    pub level_sizes: Vec<usize>,
    /// Largest number of results held for inheritance at any moment.
    pub peak_retained: usize,
    pub ecg: EcgStats,
    pub forest_weight: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BatchOptions {
    pub reuse: bool,
    /// Also time a from-scratch run of every inheriting article.
    pub measure_direct: bool,
}

/// Clusters every article of the graph. With reuse on, articles are
/// processed along the inheritance forest one level at a time; the results
/// of level `h` are dropped from the working set once level `h + 1` is done.
pub fn batch_extract(
    ex: &Extractor<'_>,
    opts: BatchOptions,
) -> Result<(BTreeMap<NodeId, ArticleResult>, BatchReport), SchedulerError> {
    let g = ex.graph();
    let articles: Vec<NodeId> = g.articles().collect();
    let mut report = BatchReport::default();
    let mut out = BTreeMap::new();

    let timed_direct =
        |a: NodeId, level: usize| -> Result<(ArticleResult, NodeTiming), SchedulerError> {
            let t = Instant::now();
            let r = ex.cluster_direct(a)?;
            let s = t.elapsed().as_secs_f64();
            let timing = NodeTiming {
                article: a,
                level,
                parent: None,
                seconds: s,
                direct_seconds: Some(s),
                inherited: 0,
                fresh: r.fresh,
            };
            Ok((r, timing))
        };

    if !opts.reuse {
        let done: Vec<_> = articles
            .par_iter()
            .map(|&a| timed_direct(a, 0))
            .collect::<Result<_, _>>()?;
        report.level_sizes = vec![articles.len()];
        for (r, t) in done {
            report.timings.push(t);
            out.insert(r.article, r);
        }
        return Ok((out, report));
    }

    let ecg_cfg = ex.config().ecg;
    ecg_cfg.validate()?;
    let ecg = build_ecg(g, &ecg_cfg);
    let forest = prim_max_spanning(&ecg, ecg_cfg.degree);
    report.ecg = ecg.stats;
    report.forest_weight = forest.weight();
    let mut levels = forest.levels();
    let outside: Vec<NodeId> = articles
        .iter()
        .copied()
        .filter(|a| !ecg.nodes().contains(a))
        .collect();
    if levels.is_empty() {
        levels.push(Vec::new());
    }
    levels[0].extend(outside);
    levels[0].sort();

    let mut previous: HashMap<NodeId, ArticleResult> = HashMap::new();
    for (depth, level) in levels.iter().enumerate() {
        let done: Vec<(ArticleResult, NodeTiming)> = level
            .par_iter()
            .map(
                |&a| match forest.parent_of(a).and_then(|p| previous.get(&p)) {
                    None => timed_direct(a, depth),
                    Some(parent) => {
                        let t = Instant::now();
                        let r = ex.inherit_and_cluster(parent, a)?;
                        let seconds = t.elapsed().as_secs_f64();
                        let direct_seconds = if opts.measure_direct {
                            let t = Instant::now();
                            ex.cluster_direct(a)?;
                            Some(t.elapsed().as_secs_f64())
                        } else {
                            None
                        };
                        let timing = NodeTiming {
                            article: a,
                            level: depth,
                            parent: Some(parent.article),
                            seconds,
                            direct_seconds,
                            inherited: r.inherited,
                            fresh: r.fresh,
                        };
                        Ok((r, timing))
                    }
                },
            )
            .collect::<Result<_, _>>()?;
        let mut current = HashMap::with_capacity(done.len());
        for (r, t) in done {
            report.timings.push(t);
            current.insert(r.article, r);
        }
        report.peak_retained = report.peak_retained.max(previous.len() + current.len());
        report.level_sizes.push(level.len());
        for (a, r) in previous.drain() {
            out.insert(a, r);
        }
        previous = current;
    }
    out.extend(previous);
    Ok((out, report))
}
