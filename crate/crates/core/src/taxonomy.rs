//! Per-entity IsA taxonomies built from the category layer, and the tf-idf
//! style feature vectors derived from them.
//!
//! A category `c` of a node `x` is accepted as a hypernym edge `x -> c` when
//! the words of `c` are frequent among all of `x`'s category names. Starting
//! from an entity the accepted edges are followed level by level, giving a DAG
//! whose node confidences are the best path products of edge weights.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::graph::{KnowledgeGraph, NodeId};
use crate::sparse::SparseVector;

#[derive(Debug, Error, PartialEq)]
pub enum TaxonomyError {
    #[error("`{0}` has no categories")]
    NoCategories(String),
    #[error("category `{0}` has no words")]
    EmptyCategoryName(String),
    #[error("{0} is not in the taxonomy")]
    NotInTaxonomy(NodeId),
    #[error("edge set is not a DAG rooted at {0}")]
    NotADag(NodeId),
    #[error("invalid taxonomy config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaxonomyConfig {
    /// Minimum (exclusive) category score for an edge to be accepted.
    pub alpha_edge: f64,
    /// Number of category levels expanded above the root.
    pub max_depth: usize,
}

impl Default for TaxonomyConfig {
    fn default() -> Self {
        TaxonomyConfig {
            alpha_edge: 0.2,
            max_depth: 4,
        }
    }
}

impl TaxonomyConfig {
    pub fn validate(&self) -> Result<(), TaxonomyError> {
        if !(self.alpha_edge > 0.0 && self.alpha_edge <= 1.0) {
            return Err(TaxonomyError::InvalidConfig(format!(
                "alpha_edge must lie in (0, 1], got {}",
                self.alpha_edge
            )));
        }
        if self.max_depth == 0 {
            return Err(TaxonomyError::InvalidConfig(
                "max_depth must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Lowercased alphanumeric words of a category name. A leading `Category:`
/// namespace is ignored.
pub fn tokenize(name: &str) -> Vec<String> {
    let body = match name.get(..9) {
        Some(prefix) if prefix.eq_ignore_ascii_case("category:") => &name[9..],
        _ => name,
    };
    body.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

fn unique_words(name: &str) -> BTreeSet<String> {
    tokenize(name).into_iter().collect()
}

/// Word frequencies across the category names of one node.
struct WordProfile {
    counts: HashMap<String, usize>,
    categories: usize,
}

impl WordProfile {
    fn of(g: &KnowledgeGraph, e: NodeId) -> Result<Self, TaxonomyError> {
        let cats = g.categories(e);
        if cats.is_empty() {
            return Err(TaxonomyError::NoCategories(g.name(e).to_string()));
        }
        let mut counts = HashMap::new();
        for &c in cats {
            for w in unique_words(g.name(c)) {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
        Ok(WordProfile {
            counts,
            categories: cats.len(),
        })
    }

    fn word_score(&self, word: &str) -> f64 {
        self.counts.get(word).copied().unwrap_or(0) as f64 / self.categories as f64
    }

    fn category_score(&self, name: &str) -> Option<f64> {
        let words = unique_words(name);
        if words.is_empty() {
            return None;
        }
        Some(words.iter().map(|w| self.word_score(w)).sum::<f64>() / words.len() as f64)
    }
}

/// Share of `e`'s categories whose name contains `word`.
pub fn word_score(g: &KnowledgeGraph, e: NodeId, word: &str) -> Result<f64, TaxonomyError> {
    Ok(WordProfile::of(g, e)?.word_score(&word.to_lowercase()))
}

/// Mean word score of the unique words of category `c` with respect to `e`.
pub fn category_score(g: &KnowledgeGraph, e: NodeId, c: NodeId) -> Result<f64, TaxonomyError> {
    WordProfile::of(g, e)?
        .category_score(g.name(c))
        .ok_or_else(|| TaxonomyError::EmptyCategoryName(g.name(c).to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TaxonomyEdge {
    pub child: NodeId,
    pub parent: NodeId,
    pub weight: f64,
}

/// Weighted hypernym DAG of one entity.
#[derive(Clone, Debug, PartialEq)]
pub struct IsaTaxonomy {
    root: NodeId,
    nodes: BTreeSet<NodeId>,
    edges: Vec<TaxonomyEdge>,
    parents: BTreeMap<NodeId, Vec<(NodeId, f64)>>,
    confidence: BTreeMap<NodeId, f64>,
}

impl IsaTaxonomy {
    /// Assembles a taxonomy from explicit edges. Every edge endpoint other
    /// than the root becomes a node; the result must be acyclic with every
    /// node reachable from the root.
    pub fn from_edges(
        root: NodeId,
        edges: impl IntoIterator<Item = (NodeId, NodeId, f64)>,
    ) -> Result<Self, TaxonomyError> {
        let mut nodes = BTreeSet::new();
        let mut parents: BTreeMap<NodeId, Vec<(NodeId, f64)>> = BTreeMap::new();
        let mut list = Vec::new();
        for (child, parent, weight) in edges {
            if parent == root || child == parent {
                return Err(TaxonomyError::NotADag(root));
            }
            for n in [child, parent] {
                if n != root {
                    nodes.insert(n);
                }
            }
            parents.entry(child).or_default().push((parent, weight));
            list.push(TaxonomyEdge {
                child,
                parent,
                weight,
            });
        }
        list.sort_by_key(|e| (e.child, e.parent));
        let mut tax = IsaTaxonomy {
            root,
            nodes,
            edges: list,
            parents,
            confidence: BTreeMap::new(),
        };
        tax.confidence = tax.best_path_products()?;
        Ok(tax)
    }

    fn empty(root: NodeId) -> Self {
        IsaTaxonomy {
            root,
            nodes: BTreeSet::new(),
            edges: Vec::new(),
            parents: BTreeMap::new(),
            confidence: BTreeMap::new(),
        }
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    /// Category nodes, the root excluded.
    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    pub fn contains(&self, c: NodeId) -> bool {
        self.nodes.contains(&c)
    }

    pub fn edges(&self) -> &[TaxonomyEdge] {
        &self.edges
    }

    pub fn parents(&self, x: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.parents
            .get(&x)
            .into_iter()
            .flat_map(|v| v.iter().map(|&(p, _)| p))
    }

    pub fn confidence(&self) -> &BTreeMap<NodeId, f64> {
        &self.confidence
    }

    /// `p(c|e)`: the best product of edge weights over root-to-`c` paths.
    pub fn path_confidence(&self, c: NodeId) -> Result<f64, TaxonomyError> {
        self.confidence
            .get(&c)
            .copied()
            .ok_or(TaxonomyError::NotInTaxonomy(c))
    }

    /// Root first, every node after all of its children.
    pub fn topological_order(&self) -> Result<Vec<NodeId>, TaxonomyError> {
        let mut indegree: BTreeMap<NodeId, usize> = self.nodes.iter().map(|&n| (n, 0)).collect();
        for e in &self.edges {
            *indegree.entry(e.parent).or_insert(0) += 1;
        }
        indegree.entry(self.root).or_insert(0);
        if indegree[&self.root] != 0 {
            return Err(TaxonomyError::NotADag(self.root));
        }
        let mut queue: VecDeque<NodeId> = VecDeque::from([self.root]);
        let mut order = Vec::with_capacity(self.nodes.len() + 1);
        while let Some(x) = queue.pop_front() {
            order.push(x);
            for p in self.parents(x) {
                let d = indegree.get_mut(&p).expect("parent indexed");
                *d -= 1;
                if *d == 0 {
                    queue.push_back(p);
                }
            }
        }
        // Nodes left over sit on a cycle or are unreachable from the root.
        if order.len() != self.nodes.len() + 1 {
            return Err(TaxonomyError::NotADag(self.root));
        }
        Ok(order)
    }

    fn best_path_products(&self) -> Result<BTreeMap<NodeId, f64>, TaxonomyError> {
        let order = self.topological_order()?;
        let mut best: HashMap<NodeId, f64> = HashMap::from([(self.root, 1.0)]);
        for x in order {
            let bx = best[&x];
            if let Some(ps) = self.parents.get(&x) {
                for &(p, w) in ps {
                    let cand = bx * w;
                    let slot = best.entry(p).or_insert(f64::NEG_INFINITY);
                    if cand > *slot {
                        *slot = cand;
                    }
                }
            }
        }
        best.remove(&self.root);
        Ok(best.into_iter().collect())
    }

    pub fn to_json(&self, g: &KnowledgeGraph) -> serde_json::Value {
        let edges: Vec<_> = self
            .edges
            .iter()
            .map(|e| json!([g.name(e.child), g.name(e.parent), e.weight]))
            .collect();
        let confidence: BTreeMap<&str, f64> = self
            .confidence
            .iter()
            .map(|(&c, &v)| (g.name(c), v))
            .collect();
        json!({ "root": g.name(self.root), "edges": edges, "confidence": confidence })
    }
}

/// Builds taxonomies, caching accepted hypernym edges per node so that
/// categories shared between entities are scored once.
pub struct IsaBuilder<'g> {
    g: &'g KnowledgeGraph,
    cfg: TaxonomyConfig,
    accepted: HashMap<NodeId, Vec<(NodeId, f64)>>,
}

impl<'g> IsaBuilder<'g> {
    pub fn new(g: &'g KnowledgeGraph, cfg: TaxonomyConfig) -> Self {
        IsaBuilder {
            g,
            cfg,
            accepted: HashMap::new(),
        }
    }

    fn accepted_parents(&mut self, x: NodeId) -> &[(NodeId, f64)] {
        let (g, alpha) = (self.g, self.cfg.alpha_edge);
        self.accepted.entry(x).or_insert_with(|| {
            let Ok(profile) = WordProfile::of(g, x) else {
                return Vec::new();
            };
            g.categories(x)
                .iter()
                .filter_map(|&c| {
                    let w = profile.category_score(g.name(c))?;
                    (w > alpha).then_some((c, w))
                })
                .collect()
        })
    }

    /// Level-wise expansion from `e`. An edge into an already discovered node
    /// is kept unless it would close a cycle.
    pub fn build(&mut self, e: NodeId) -> IsaTaxonomy {
        let mut visited: BTreeSet<NodeId> = BTreeSet::from([e]);
        let mut up: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        let mut edges: Vec<(NodeId, NodeId, f64)> = Vec::new();
        let mut frontier = vec![e];
        for _ in 0..self.cfg.max_depth {
            let mut next = Vec::new();
            for &child in &frontier {
                let cands = self.accepted_parents(child).to_vec();
                for (parent, w) in cands {
                    if parent == e {
                        continue;
                    }
                    if visited.insert(parent) {
                        next.push(parent);
                    } else if up.get(&child).is_some_and(|ps| ps.contains(&parent))
                        || reaches(&up, parent, child)
                    {
                        continue;
                    }
                    up.entry(child).or_default().push(parent);
                    edges.push((child, parent, w));
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        if edges.is_empty() {
            return IsaTaxonomy::empty(e);
        }
        IsaTaxonomy::from_edges(e, edges).expect("construction keeps the graph acyclic")
    }
}

fn reaches(up: &HashMap<NodeId, Vec<NodeId>>, from: NodeId, target: NodeId) -> bool {
    let mut stack = vec![from];
    let mut seen = BTreeSet::new();
    while let Some(x) = stack.pop() {
        if x == target {
            return true;
        }
        if seen.insert(x) {
            if let Some(ps) = up.get(&x) {
                stack.extend(ps.iter().copied());
            }
        }
    }
    false
}

pub fn build_isa(g: &KnowledgeGraph, e: NodeId, cfg: &TaxonomyConfig) -> IsaTaxonomy {
    IsaBuilder::new(g, *cfg).build(e)
}

/// The taxonomies of a set of entities plus category document frequencies.
#[derive(Clone, Debug, Default)]
pub struct TaxonomyCorpus {
    taxonomies: BTreeMap<NodeId, IsaTaxonomy>,
    df: HashMap<NodeId, usize>,
}

impl TaxonomyCorpus {
    pub fn from_taxonomies(taxes: impl IntoIterator<Item = IsaTaxonomy>) -> Self {
        let mut taxonomies = BTreeMap::new();
        for t in taxes {
            taxonomies.insert(t.root(), t);
        }
        let mut df = HashMap::new();
        for t in taxonomies.values() {
            for &c in t.nodes() {
                *df.entry(c).or_insert(0) += 1;
            }
        }
        TaxonomyCorpus { taxonomies, df }
    }

    /// Builds the taxonomy of every entity in `entities`.
    pub fn build(
        g: &KnowledgeGraph,
        entities: impl IntoIterator<Item = NodeId>,
        cfg: &TaxonomyConfig,
    ) -> Self {
        let mut builder = IsaBuilder::new(g, *cfg);
        Self::from_taxonomies(entities.into_iter().map(|e| builder.build(e)))
    }

    pub fn len(&self) -> usize {
        self.taxonomies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taxonomies.is_empty()
    }

    pub fn taxonomy(&self, e: NodeId) -> Option<&IsaTaxonomy> {
        self.taxonomies.get(&e)
    }

    pub fn taxonomies(&self) -> impl Iterator<Item = &IsaTaxonomy> {
        self.taxonomies.values()
    }

    pub fn document_frequency(&self, c: NodeId) -> usize {
        self.df.get(&c).copied().unwrap_or(0)
    }

    /// All categories appearing in at least one taxonomy.
    pub fn categories(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.df.keys().copied()
    }

    /// `ln(N / df(c))`; `+inf` when no taxonomy contains `c`.
    pub fn idf(&self, c: NodeId) -> f64 {
        category_idf(self, c)
    }
}

pub fn category_idf(corpus: &TaxonomyCorpus, c: NodeId) -> f64 {
    match corpus.document_frequency(c) {
        0 => f64::INFINITY,
        df => (corpus.len() as f64 / df as f64).ln(),
    }
}

/// `w(c) = p(c|e) * idf(c)` over the taxonomy's categories.
pub fn feature_vector(tax: &IsaTaxonomy, corpus: &TaxonomyCorpus) -> SparseVector {
    SparseVector::from_pairs(tax.confidence().iter().filter_map(|(&c, &p)| {
        let idf = corpus.idf(c);
        idf.is_finite().then_some((c, p * idf))
    }))
}
