//! Knowledge graph storage.
//!
//! A [`KnowledgeGraph`] holds entities and categories in one id space. Entities
//! carry an ordered list of outgoing links (the linked entities of their
//! article); every node may carry categories, so categories form their own
//! parent layer. The graph is immutable once built and can be shared freely
//! between threads.
//!
//! Node ids are assigned in lexicographic order of the node names, so
//! comparing two [`NodeId`]s is the same as comparing their names.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{file} line {line}: {message}")]
    Malformed {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file} line {line}: reference to undeclared node `{id}`")]
    Dangling {
        file: String,
        line: usize,
        id: String,
    },
    #[error("{file} line {line}: {message}")]
    Invalid {
        file: String,
        line: usize,
        message: String,
    },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense node handle. Ordering follows the lexicographic order of node names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(u32);

impl NodeId {
    pub const fn new(index: u32) -> Self {
        NodeId(index)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Entity,
    Category,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Entity => "entity",
            NodeKind::Category => "category",
        }
    }
}

impl FromStr for NodeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "entity" => Ok(NodeKind::Entity),
            "category" => Ok(NodeKind::Category),
            other => Err(format!("unknown node kind `{other}`")),
        }
    }
}

/// What counts towards a node's degree.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegreeMode {
    /// In-links plus out-links.
    #[default]
    Total,
    Out,
}

/// Which links make up the neighborhood `N(e)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Neighborhood {
    /// The article's own linked entities.
    #[default]
    Out,
    /// Out-links and in-links together.
    Undirected,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Reject dangling references, self-loops and kind mismatches instead of
    /// dropping them with a warning.
    pub strict: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeGraph {
    names: Vec<String>,
    kinds: Vec<NodeKind>,
    index: HashMap<String, NodeId>,
    links: Vec<Vec<NodeId>>,
    out_sorted: Vec<Vec<NodeId>>,
    in_sorted: Vec<Vec<NodeId>>,
    undirected: Vec<Vec<NodeId>>,
    categories: Vec<Vec<NodeId>>,
    link_count: Vec<u32>,
    entity_count: usize,
}

impl KnowledgeGraph {
    /// Loads a graph from the three tab-separated sources.
    pub fn load<E: BufRead, L: BufRead, C: BufRead>(
        entities: E,
        links: L,
        categories: C,
        opts: LoadOptions,
    ) -> Result<Self, GraphError> {
        let mut builder = GraphBuilder::new();
        for (line, rec) in records(entities, "entities") {
            let (line, fields) = (line, rec?);
            let kind = NodeKind::from_str(&fields.1).map_err(|message| GraphError::Malformed {
                file: "entities".into(),
                line,
                message,
            })?;
            builder.declare_at(&fields.0, kind, line)?;
        }
        for (line, rec) in records(links, "links") {
            let (source, target) = rec?;
            builder.links.push(Pending {
                from: source,
                to: target,
                line,
            });
        }
        for (line, rec) in records(categories, "categories") {
            let (node, category) = rec?;
            builder.memberships.push(Pending {
                from: node,
                to: category,
                line,
            });
        }
        builder.build_with(opts)
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    /// Number of articles `N`: every declared entity is an article.
    pub fn article_count(&self) -> usize {
        self.entity_count
    }

    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.index.get(name).copied()
    }

    pub fn id(&self, name: &str) -> Result<NodeId, GraphError> {
        self.node(name)
            .ok_or_else(|| GraphError::UnknownNode(name.to_string()))
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.names[id.index()]
    }

    pub fn kind(&self, id: NodeId) -> NodeKind {
        self.kinds[id.index()]
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.names.len() as u32).map(NodeId)
    }

    pub fn entities(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes().filter(|&n| self.kind(n) == NodeKind::Entity)
    }

    /// Entities with at least one outgoing link.
    pub fn articles(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entities()
            .filter(|&n| !self.links[n.index()].is_empty())
    }

    /// Linked entities of `e` in article order.
    pub fn linked_entities(&self, e: NodeId) -> &[NodeId] {
        &self.links[e.index()]
    }

    /// Sorted neighborhood of `e`.
    pub fn neighbors(&self, e: NodeId, mode: Neighborhood) -> &[NodeId] {
        match mode {
            Neighborhood::Out => &self.out_sorted[e.index()],
            Neighborhood::Undirected => &self.undirected[e.index()],
        }
    }

    /// Sorted sources linking to `e`.
    pub fn in_links(&self, e: NodeId) -> &[NodeId] {
        &self.in_sorted[e.index()]
    }

    pub fn degree(&self, e: NodeId, mode: DegreeMode) -> usize {
        match mode {
            DegreeMode::Out => self.links[e.index()].len(),
            DegreeMode::Total => self.links[e.index()].len() + self.in_sorted[e.index()].len(),
        }
    }

    /// Direct categories of a node. For a category these are its parents.
    pub fn categories(&self, node: NodeId) -> &[NodeId] {
        &self.categories[node.index()]
    }

    /// `n(e)`: number of articles linking to `e`.
    pub fn link_count(&self, e: NodeId) -> u32 {
        self.link_count[e.index()]
    }

    pub fn write_entities<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for id in self.nodes() {
            writeln!(w, "{}\t{}", self.name(id), self.kind(id).as_str())?;
        }
        Ok(())
    }

    pub fn write_links<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for id in self.nodes() {
            for &t in self.linked_entities(id) {
                writeln!(w, "{}\t{}", self.name(id), self.name(t))?;
            }
        }
        Ok(())
    }

    pub fn write_categories<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for id in self.nodes() {
            for &c in self.categories(id) {
                writeln!(w, "{}\t{}", self.name(id), self.name(c))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
struct Pending {
    from: String,
    to: String,
    line: usize,
}

/// Incremental construction of a [`KnowledgeGraph`].
#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: BTreeMap<String, (NodeKind, usize)>,
    links: Vec<Pending>,
    memberships: Vec<Pending>,
    conflicts: Vec<(String, usize)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity(&mut self, id: &str) -> &mut Self {
        self.declare(id, NodeKind::Entity)
    }

    pub fn category(&mut self, id: &str) -> &mut Self {
        self.declare(id, NodeKind::Category)
    }

    /// Declares a node. Redeclaring with the same kind is a no-op; a kind
    /// conflict surfaces when the graph is built.
    pub fn declare(&mut self, id: &str, kind: NodeKind) -> &mut Self {
        let line = self.nodes.len() + 1;
        match self.nodes.get(id) {
            Some(&(k, _)) if k != kind => self.conflicts.push((id.to_string(), line)),
            Some(_) => {}
            None => {
                self.nodes.insert(id.to_string(), (kind, line));
            }
        }
        self
    }

    fn declare_at(&mut self, id: &str, kind: NodeKind, line: usize) -> Result<(), GraphError> {
        match self.nodes.get(id) {
            Some(&(k, _)) if k != kind => Err(GraphError::Malformed {
                file: "entities".into(),
                line,
                message: format!("`{id}` redeclared as {}", kind.as_str()),
            }),
            Some(_) => Ok(()),
            None => {
                self.nodes.insert(id.to_string(), (kind, line));
                Ok(())
            }
        }
    }

    pub fn link(&mut self, source: &str, target: &str) -> &mut Self {
        let line = self.links.len() + 1;
        self.links.push(Pending {
            from: source.to_string(),
            to: target.to_string(),
            line,
        });
        self
    }

    pub fn categorize(&mut self, node: &str, category: &str) -> &mut Self {
        let line = self.memberships.len() + 1;
        self.memberships.push(Pending {
            from: node.to_string(),
            to: category.to_string(),
            line,
        });
        self
    }

    /// Builds in strict mode.
    pub fn build(self) -> Result<KnowledgeGraph, GraphError> {
        self.build_with(LoadOptions { strict: true })
    }

    pub fn build_with(self, opts: LoadOptions) -> Result<KnowledgeGraph, GraphError> {
        if let Some((id, line)) = self.conflicts.first() {
            return Err(GraphError::Malformed {
                file: "entities".into(),
                line: *line,
                message: format!("`{id}` redeclared with a different kind"),
            });
        }
        let names: Vec<String> = self.nodes.keys().cloned().collect();
        let kinds: Vec<NodeKind> = self.nodes.values().map(|&(k, _)| k).collect();
        let index: HashMap<String, NodeId> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), NodeId(i as u32)))
            .collect();
        let n = names.len();

        let mut links: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        let mut seen_links: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); n];
        for p in &self.links {
            let resolved = resolve(&index, &p.from, "links", p.line)
                .and_then(|s| resolve(&index, &p.to, "links", p.line).map(|t| (s, t)))
                .and_then(|(s, t)| {
                    if s == t {
                        return Err(invalid(
                            "links",
                            p.line,
                            format!("self-loop on `{}`", p.from),
                        ));
                    }
                    for (id, name) in [(s, &p.from), (t, &p.to)] {
                        if kinds[id.index()] != NodeKind::Entity {
                            return Err(invalid(
                                "links",
                                p.line,
                                format!("`{name}` is a category, links join entities"),
                            ));
                        }
                    }
                    Ok((s, t))
                });
            match resolved {
                Ok((s, t)) => {
                    if seen_links[s.index()].insert(t) {
                        links[s.index()].push(t);
                    }
                }
                Err(e) if opts.strict => return Err(e),
                Err(e) => log::warn!("dropping link: {e}"),
            }
        }

        let mut categories: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        let mut seen_cats: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); n];
        for p in &self.memberships {
            let resolved = resolve(&index, &p.from, "categories", p.line)
                .and_then(|s| resolve(&index, &p.to, "categories", p.line).map(|c| (s, c)))
                .and_then(|(s, c)| {
                    if kinds[c.index()] != NodeKind::Category {
                        return Err(invalid(
                            "categories",
                            p.line,
                            format!("`{}` is not a category", p.to),
                        ));
                    }
                    if s == c {
                        return Err(invalid(
                            "categories",
                            p.line,
                            format!("`{}` listed as its own category", p.to),
                        ));
                    }
                    Ok((s, c))
                });
            match resolved {
                Ok((s, c)) => {
                    if seen_cats[s.index()].insert(c) {
                        categories[s.index()].push(c);
                    }
                }
                Err(e) if opts.strict => return Err(e),
                Err(e) => log::warn!("dropping category membership: {e}"),
            }
        }

        let out_sorted: Vec<Vec<NodeId>> = seen_links
            .iter()
            .map(|s| s.iter().copied().collect())
            .collect();
        let mut in_sorted: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for (s, targets) in out_sorted.iter().enumerate() {
            for &t in targets {
                in_sorted[t.index()].push(NodeId(s as u32));
            }
        }
        let undirected = out_sorted
            .iter()
            .zip(&in_sorted)
            .map(|(o, i)| {
                let mut u: Vec<NodeId> = o.iter().chain(i).copied().collect();
                u.sort_unstable();
                u.dedup();
                u
            })
            .collect();
        let link_count = in_sorted.iter().map(|v| v.len() as u32).collect();
        let entity_count = kinds.iter().filter(|&&k| k == NodeKind::Entity).count();

        Ok(KnowledgeGraph {
            names,
            kinds,
            index,
            links,
            out_sorted,
            in_sorted,
            undirected,
            categories,
            link_count,
            entity_count,
        })
    }
}

fn resolve(
    index: &HashMap<String, NodeId>,
    name: &str,
    file: &str,
    line: usize,
) -> Result<NodeId, GraphError> {
    index
        .get(name)
        .copied()
        .ok_or_else(|| GraphError::Dangling {
            file: file.to_string(),
            line,
            id: name.to_string(),
        })
}

fn invalid(file: &str, line: usize, message: String) -> GraphError {
    GraphError::Invalid {
        file: file.to_string(),
        line,
        message,
    }
}

/// Iterates the two-field records of a tab-separated source, skipping blank
/// and `#` comment lines. Line numbers are 1-based.
fn records<R: BufRead>(
    reader: R,
    file: &'static str,
) -> impl Iterator<Item = (usize, Result<(String, String), GraphError>)> {
    reader.lines().enumerate().filter_map(move |(i, line)| {
        let line_no = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some((line_no, Err(GraphError::Io(e)))),
        };
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() || line.starts_with('#') {
            return None;
        }
        let mut parts = line.split('\t');
        let rec = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                Ok((a.to_string(), b.to_string()))
            }
            _ => Err(GraphError::Malformed {
                file: file.to_string(),
                line: line_no,
                message: "expected two non-empty tab-separated fields".into(),
            }),
        };
        Some((line_no, rec))
    })
}

/// Co-occurrence counts of linked-entity pairs within each article.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CoocStats {
    pair_count: HashMap<(NodeId, NodeId), u32>,
    occurrence_count: HashMap<NodeId, u64>,
    total_pairs: u64,
}

fn ordered(x: NodeId, y: NodeId) -> (NodeId, NodeId) {
    if x <= y {
        (x, y)
    } else {
        (y, x)
    }
}

impl CoocStats {
    /// Counts every unordered pair inside each article's link set.
    pub fn from_graph(g: &KnowledgeGraph) -> Self {
        let mut stats = CoocStats::default();
        for a in g.articles() {
            let linked = g.neighbors(a, Neighborhood::Out);
            for (i, &x) in linked.iter().enumerate() {
                for &y in &linked[i + 1..] {
                    stats.add_pair(x, y, 1);
                }
            }
        }
        stats
    }

    /// Builds statistics from explicit pair counts.
    pub fn from_pairs(pairs: impl IntoIterator<Item = ((NodeId, NodeId), u32)>) -> Self {
        let mut stats = CoocStats::default();
        for ((x, y), c) in pairs {
            if c > 0 && x != y {
                stats.add_pair(x, y, c);
            }
        }
        stats
    }

    fn add_pair(&mut self, x: NodeId, y: NodeId, count: u32) {
        *self.pair_count.entry(ordered(x, y)).or_insert(0) += count;
        *self.occurrence_count.entry(x).or_insert(0) += u64::from(count);
        *self.occurrence_count.entry(y).or_insert(0) += u64::from(count);
        self.total_pairs += u64::from(count);
    }

    pub fn pair_count(&self, x: NodeId, y: NodeId) -> u32 {
        self.pair_count.get(&ordered(x, y)).copied().unwrap_or(0)
    }

    pub fn occurrence_count(&self, x: NodeId) -> u64 {
        self.occurrence_count.get(&x).copied().unwrap_or(0)
    }

    pub fn total_pairs(&self) -> u64 {
        self.total_pairs
    }

    pub fn distinct_pairs(&self) -> usize {
        self.pair_count.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc() -> KnowledgeGraph {
        let mut b = GraphBuilder::new();
        b.entity("a").entity("b").entity("c");
        b.link("a", "b").link("a", "c");
        b.build().unwrap()
    }

    #[test]
    fn direct_construction() {
        let g = abc();
        let (a, b, c) = (g.id("a").unwrap(), g.id("b").unwrap(), g.id("c").unwrap());
        assert_eq!(g.linked_entities(a), &[b, c]);
        assert_eq!(g.link_count(b), 1);
        assert_eq!(g.link_count(c), 1);
        assert_eq!(g.link_count(a), 0);
        assert_eq!(g.article_count(), 3);
        assert!(g.neighbors(b, Neighborhood::Out).is_empty());
        assert_eq!(g.degree(a, DegreeMode::Out), 2);
        assert_eq!(g.degree(a, DegreeMode::Total), 2);
        assert_eq!(g.degree(b, DegreeMode::Total), 1);
        assert_eq!(g.neighbors(b, Neighborhood::Undirected), &[a]);
    }

    #[test]
    fn empty_link_file() {
        let g = KnowledgeGraph::load(
            "a\tentity\nb\tentity\n".as_bytes(),
            "".as_bytes(),
            "".as_bytes(),
            LoadOptions { strict: true },
        )
        .unwrap();
        assert_eq!(g.node_count(), 2);
        assert!(g.entities().all(|e| g.link_count(e) == 0));
        assert_eq!(g.articles().count(), 0);
    }

    #[test]
    fn dangling_reference_strict_and_lenient() {
        let ents = "# header\na\tentity\nb\tentity\n";
        let links = "a\tb\na\tghost\n";
        let err = KnowledgeGraph::load(
            ents.as_bytes(),
            links.as_bytes(),
            "".as_bytes(),
            LoadOptions { strict: true },
        )
        .unwrap_err();
        match err {
            GraphError::Dangling { line, id, .. } => {
                assert_eq!(line, 2);
                assert_eq!(id, "ghost");
            }
            other => panic!("unexpected {other}"),
        }
        let g = KnowledgeGraph::load(
            ents.as_bytes(),
            links.as_bytes(),
            "".as_bytes(),
            LoadOptions { strict: false },
        )
        .unwrap();
        assert_eq!(g.linked_entities(g.id("a").unwrap()).len(), 1);
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = KnowledgeGraph::load(
            "a\tentity\nb entity\n".as_bytes(),
            "".as_bytes(),
            "".as_bytes(),
            LoadOptions::default(),
        )
        .unwrap_err();
        assert!(
            matches!(err, GraphError::Malformed { line: 2, .. }),
            "{err}"
        );
        let err = KnowledgeGraph::load(
            "a\tthing\n".as_bytes(),
            "".as_bytes(),
            "".as_bytes(),
            LoadOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::Malformed { line: 1, .. }));
    }

    #[test]
    fn self_loops_rejected() {
        let mut b = GraphBuilder::new();
        b.entity("a").link("a", "a");
        assert!(matches!(b.build(), Err(GraphError::Invalid { .. })));
    }

    #[test]
    fn category_parents() {
        let mut b = GraphBuilder::new();
        b.entity("e").category("c1").category("c2");
        b.categorize("e", "c1").categorize("c1", "c2");
        let g = b.build().unwrap();
        let (e, c1, c2) = (g.id("e").unwrap(), g.id("c1").unwrap(), g.id("c2").unwrap());
        assert_eq!(g.categories(e), &[c1]);
        assert_eq!(g.categories(c1), &[c2]);
        assert!(g.categories(c2).is_empty());
        assert!(matches!(g.id("nope"), Err(GraphError::UnknownNode(_))));
    }

    #[test]
    fn ids_follow_name_order() {
        let mut b = GraphBuilder::new();
        b.entity("zeta").entity("alpha").category("mid");
        let g = b.build().unwrap();
        let names: Vec<&str> = g.nodes().map(|n| g.name(n)).collect();
        assert_eq!(names, ["alpha", "mid", "zeta"]);
    }

    #[test]
    fn cooccurrence_counts() {
        let mut b = GraphBuilder::new();
        for e in ["a1", "a2", "a3", "x", "y", "z"] {
            b.entity(e);
        }
        b.link("a1", "x").link("a1", "y");
        let g = b.clone_graph();
        let s = CoocStats::from_graph(&g);
        let (x, y) = (g.id("x").unwrap(), g.id("y").unwrap());
        assert_eq!(s.pair_count(x, y), 1);
        assert_eq!(s.total_pairs(), 1);

        b.link("a2", "x").link("a2", "y");
        let g = b.clone_graph();
        let s = CoocStats::from_graph(&g);
        assert_eq!(s.pair_count(x, y), 2);

        b.link("a3", "x").link("a3", "y").link("a3", "z");
        let g = b.clone_graph();
        let s = CoocStats::from_graph(&g);
        let z = g.id("z").unwrap();
        // a3 alone contributes C(3,2) = 3 pairs: {x,y}, {x,z}, {y,z}
        assert_eq!(s.pair_count(x, y), 3);
        assert_eq!(s.pair_count(x, z), 1);
        assert_eq!(s.pair_count(z, y), 1);
        assert_eq!(s.total_pairs(), 5);
        assert_eq!(s.occurrence_count(x), 4);
    }

    impl GraphBuilder {
        fn clone_graph(&self) -> KnowledgeGraph {
            let mut b = GraphBuilder::new();
            for (name, &(kind, _)) in &self.nodes {
                b.declare(name, kind);
            }
            for p in &self.links {
                b.link(&p.from, &p.to);
            }
            for p in &self.memberships {
                b.categorize(&p.from, &p.to);
            }
            b.build().unwrap()
        }
    }
}
