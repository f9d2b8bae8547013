//! Property names for clusters, chosen from the union of the members' IsA
//! taxonomies.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmeans::Cluster;
use crate::graph::NodeId;
use crate::taxonomy::{IsaTaxonomy, TaxonomyCorpus};

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("cluster has no members")]
    EmptyCluster,
    #[error("cluster taxonomy has no categories to label with")]
    NoCategories,
    #[error("{0} is not a category of the cluster taxonomy")]
    UnknownCategory(NodeId),
    #[error("no taxonomy for member {0}")]
    MissingTaxonomy(NodeId),
    #[error("invalid label config: {0}")]
    InvalidConfig(String),
    #[error("unknown strategy `{0}` (expected mf, mfi or zlca)")]
    UnknownStrategy(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Strategy {
    #[serde(rename = "MF")]
    Mf,
    #[serde(rename = "MFI")]
    Mfi,
    #[default]
    #[serde(rename = "ZLCA")]
    Zlca,
}

impl FromStr for Strategy {
    type Err = LabelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mf" => Ok(Strategy::Mf),
            "mfi" => Ok(Strategy::Mfi),
            "zlca" => Ok(Strategy::Zlca),
            _ => Err(LabelError::UnknownStrategy(s.to_string())),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Mf => "MF",
            Strategy::Mfi => "MFI",
            Strategy::Zlca => "ZLCA",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    /// Fraction of members the label must cover.
    pub zeta: f64,
    /// Deepest level searched before the coverage bound is relaxed.
    pub max_level: usize,
    pub strategy: Strategy,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            zeta: 0.8,
            max_level: 5,
            strategy: Strategy::Zlca,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<(), LabelError> {
        if !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return Err(LabelError::InvalidConfig(format!(
                "zeta must lie in (0, 1], got {}",
                self.zeta
            )));
        }
        if self.max_level == 0 {
            return Err(LabelError::InvalidConfig("max_level must be >= 1".into()));
        }
        Ok(())
    }
}

/// Unweighted union of the members' taxonomies.
#[derive(Clone, Debug)]
pub struct ClusterTaxonomy {
    members: Vec<NodeId>,
    parents: BTreeMap<NodeId, BTreeSet<NodeId>>,
    tf: BTreeMap<NodeId, usize>,
    covered: BTreeMap<NodeId, usize>,
    level: BTreeMap<NodeId, usize>,
}

pub fn union_taxonomy<'a>(
    taxes: impl IntoIterator<Item = &'a IsaTaxonomy>,
) -> Result<ClusterTaxonomy, LabelError> {
    let mut members = Vec::new();
    let mut parents: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    let mut tf: BTreeMap<NodeId, usize> = BTreeMap::new();
    for t in taxes {
        members.push(t.root());
        for e in t.edges() {
            parents.entry(e.child).or_default().insert(e.parent);
        }
        for &c in t.nodes() {
            *tf.entry(c).or_insert(0) += 1;
        }
    }
    if members.is_empty() {
        return Err(LabelError::EmptyCluster);
    }
    members.sort();
    members.dedup();

    let up = |x: NodeId| parents.get(&x).into_iter().flatten().copied();
    let mut covered: BTreeMap<NodeId, usize> = BTreeMap::new();
    for &m in &members {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<NodeId> = up(m).collect();
        while let Some(c) = stack.pop() {
            if c != m && seen.insert(c) {
                stack.extend(up(c));
            }
        }
        for c in seen {
            *covered.entry(c).or_insert(0) += 1;
        }
    }

    let mut level: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut queue: VecDeque<(NodeId, usize)> = members.iter().map(|&m| (m, 0)).collect();
    let member_set: BTreeSet<NodeId> = members.iter().copied().collect();
    while let Some((x, d)) = queue.pop_front() {
        for p in up(x) {
            if !member_set.contains(&p) && !level.contains_key(&p) {
                level.insert(p, d + 1);
                queue.push_back((p, d + 1));
            }
        }
    }

    Ok(ClusterTaxonomy {
        members,
        parents,
        tf,
        covered,
        level,
    })
}

impl ClusterTaxonomy {
    pub fn members(&self) -> &[NodeId] {
        &self.members
    }

    pub fn categories(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.level.keys().copied()
    }

    pub fn parents(&self, x: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.parents.get(&x).into_iter().flatten().copied()
    }

    /// Number of member taxonomies containing `c`.
    pub fn tf(&self, c: NodeId) -> usize {
        self.tf.get(&c).copied().unwrap_or(0)
    }

    /// Number of members having `c` as an ancestor in the union.
    pub fn covered(&self, c: NodeId) -> usize {
        self.covered.get(&c).copied().unwrap_or(0)
    }

    pub fn coverage(&self, c: NodeId) -> Result<f64, LabelError> {
        if !self.level.contains_key(&c) {
            return Err(LabelError::UnknownCategory(c));
        }
        Ok(self.covered(c) as f64 / self.members.len() as f64)
    }

    /// Shortest upward distance from any member.
    pub fn level(&self, c: NodeId) -> Option<usize> {
        self.level.get(&c).copied()
    }
}

fn argmax_by_key(
    ct: &ClusterTaxonomy,
    key: impl Fn(NodeId) -> Option<f64>,
) -> Result<NodeId, LabelError> {
    let mut best: Option<(f64, NodeId)> = None;
    for c in ct.categories() {
        let Some(k) = key(c) else { continue };
        // categories iterate in ascending id, so strict > keeps the smallest on ties
        if best.is_none_or(|(bk, _)| k > bk) {
            best = Some((k, c));
        }
    }
    best.map(|(_, c)| c).ok_or(LabelError::NoCategories)
}

/// Most frequent category.
pub fn label_mf(ct: &ClusterTaxonomy) -> Result<NodeId, LabelError> {
    argmax_by_key(ct, |c| Some(ct.tf(c) as f64))
}

/// Most frequent yet informative: maximal `tf * idf`.
pub fn label_mfi(ct: &ClusterTaxonomy, corpus: &TaxonomyCorpus) -> Result<NodeId, LabelError> {
    argmax_by_key(ct, |c| {
        let idf = corpus.idf(c);
        idf.is_finite().then(|| ct.tf(c) as f64 * idf)
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LcaChoice {
    pub label: NodeId,
    pub coverage: f64,
    pub level: usize,
    /// Coverage bound in force when the label was found.
    pub zeta: f64,
}

/// Members a category must cover for the bound `zeta`.
fn required(zeta: f64, members: usize) -> usize {
    ((zeta * members as f64) - 1e-9).ceil().max(1.0) as usize
}

/// Level-wise search for the most specific category covering at least a
/// `zeta` fraction of members. When no level up to `max_level` qualifies the
/// bound drops by one member and the search restarts.
pub fn label_zeta_lca(
    ct: &ClusterTaxonomy,
    corpus: &TaxonomyCorpus,
    cfg: &LabelConfig,
) -> Result<LcaChoice, LabelError> {
    cfg.validate()?;
    let n = ct.members.len();
    let mut by_level: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
    for (&c, &l) in &ct.level {
        if corpus.idf(c).is_finite() {
            by_level.entry(l).or_default().push(c);
        }
    }
    if by_level.is_empty() {
        return Err(LabelError::NoCategories);
    }
    let mut need = required(cfg.zeta, n);
    loop {
        let mut eligible: Vec<NodeId> = Vec::new();
        for level in 1..=cfg.max_level {
            eligible.extend(
                by_level
                    .get(&level)
                    .into_iter()
                    .flatten()
                    .filter(|&&c| ct.covered(c) >= need),
            );
            let best = eligible.iter().copied().max_by(|&a, &b| {
                corpus
                    .idf(a)
                    .total_cmp(&corpus.idf(b))
                    .then(ct.covered(a).cmp(&ct.covered(b)))
                    .then(b.cmp(&a))
            });
            if let Some(label) = best {
                return Ok(LcaChoice {
                    label,
                    coverage: ct.covered(label) as f64 / n as f64,
                    level,
                    zeta: need as f64 / n as f64,
                });
            }
        }
        if need <= 1 {
            return Err(LabelError::NoCategories);
        }
        need -= 1;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabeledCluster {
    pub cluster: Cluster,
    pub label: NodeId,
    pub coverage: f64,
    pub strategy: Strategy,
}

/// Labels `cluster` using the members' taxonomies from `corpus`.
pub fn label_cluster(
    cluster: &Cluster,
    corpus: &TaxonomyCorpus,
    cfg: &LabelConfig,
) -> Result<LabeledCluster, LabelError> {
    let taxes = cluster
        .members
        .iter()
        .map(|&m| corpus.taxonomy(m).ok_or(LabelError::MissingTaxonomy(m)))
        .collect::<Result<Vec<_>, _>>()?;
    let ct = union_taxonomy(taxes)?;
    let label = match cfg.strategy {
        Strategy::Mf => label_mf(&ct)?,
        Strategy::Mfi => label_mfi(&ct, corpus)?,
        Strategy::Zlca => label_zeta_lca(&ct, corpus, cfg)?.label,
    };
    Ok(LabeledCluster {
        cluster: cluster.clone(),
        label,
        coverage: ct.coverage(label)?,
        strategy: cfg.strategy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::SparseVector;

    fn id(i: u32) -> NodeId {
        NodeId::new(i)
    }

    fn tax(root: u32, edges: &[(u32, u32)]) -> IsaTaxonomy {
        IsaTaxonomy::from_edges(id(root), edges.iter().map(|&(a, b)| (id(a), id(b), 1.0))).unwrap()
    }

    // entities 1..=4, categories c1=11, c2=12, c3=13, c4=14
    fn fig_corpus() -> TaxonomyCorpus {
        TaxonomyCorpus::from_taxonomies([
            tax(1, &[(1, 11), (11, 12), (12, 14)]),
            tax(2, &[(2, 11), (11, 12), (12, 14)]),
            tax(3, &[(3, 12), (12, 14)]),
            tax(4, &[(4, 13), (13, 14)]),
        ])
    }

    #[test]
    fn fig_example() {
        let corpus = fig_corpus();
        assert!((corpus.idf(id(11)) - 2f64.ln()).abs() < 1e-15);
        assert!((corpus.idf(id(12)) - (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert_eq!(corpus.idf(id(14)), 0.0);
        let ct = union_taxonomy([1, 2, 3].map(|e| corpus.taxonomy(id(e)).unwrap())).unwrap();
        assert!((ct.coverage(id(11)).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(ct.coverage(id(14)).unwrap(), 1.0);
        let cfg = LabelConfig {
            zeta: 1.0,
            ..Default::default()
        };
        let pick = label_zeta_lca(&ct, &corpus, &cfg).unwrap();
        assert_eq!(pick.label, id(12));
        assert_eq!(pick.coverage, 1.0);
        assert_eq!(label_mf(&ct).unwrap(), id(12));
        assert_eq!(
            ct.coverage(id(99)),
            Err(LabelError::UnknownCategory(id(99)))
        );
    }

    #[test]
    fn union_counts() {
        let a = tax(1, &[(1, 10), (10, 12), (1, 11)]);
        let b = tax(2, &[(2, 11), (11, 12), (12, 13)]);
        let ct = union_taxonomy([&a, &b]).unwrap();
        assert_eq!(ct.tf(id(12)), 2);
        assert_eq!(ct.tf(id(10)), 1);
        assert_eq!(ct.tf(id(13)), 1);
        // 13 is reachable from member 1 only through b's edges
        assert_eq!(ct.covered(id(13)), 2);
        assert_eq!(ct.categories().count(), 4);
        assert_eq!(ct.level(id(12)), Some(2));
        let solo = union_taxonomy([&a]).unwrap();
        assert!(solo.categories().all(|c| solo.tf(c) == 1));
        assert!(matches!(
            union_taxonomy(std::iter::empty()),
            Err(LabelError::EmptyCluster)
        ));
    }

    #[test]
    fn mf_and_mfi() {
        let corpus = TaxonomyCorpus::from_taxonomies([
            tax(1, &[(1, 10), (1, 11)]),
            tax(2, &[(2, 10), (2, 11)]),
            tax(3, &[(3, 10)]),
            tax(4, &[(4, 10), (4, 12)]),
        ]);
        let ct = union_taxonomy([1, 2, 3].map(|e| corpus.taxonomy(id(e)).unwrap())).unwrap();
        assert_eq!(label_mf(&ct).unwrap(), id(10));
        // tf*idf: 10 -> 3*0 ; 11 -> 2*ln 2
        assert_eq!(label_mfi(&ct, &corpus).unwrap(), id(11));
        let empty = union_taxonomy([&IsaTaxonomy::from_edges(id(5), []).unwrap()]).unwrap();
        assert_eq!(label_mf(&empty), Err(LabelError::NoCategories));
        assert_eq!(
            label_zeta_lca(&empty, &corpus, &LabelConfig::default()),
            Err(LabelError::NoCategories)
        );
    }

    #[test]
    fn zeta_relaxes() {
        // three members with pairwise-disjoint parents: only 1/3 coverage exists
        let corpus = TaxonomyCorpus::from_taxonomies([
            tax(1, &[(1, 10)]),
            tax(2, &[(2, 11)]),
            tax(3, &[(3, 12)]),
            tax(4, &[(4, 12)]),
        ]);
        let ct = union_taxonomy([1, 2, 3].map(|e| corpus.taxonomy(id(e)).unwrap())).unwrap();
        let pick = label_zeta_lca(&ct, &corpus, &LabelConfig::default()).unwrap();
        assert!((pick.zeta - 1.0 / 3.0).abs() < 1e-12);
        assert!(pick.coverage >= pick.zeta - 1e-12);
        // 10 and 11 have idf ln 4, 12 has ln 2; tie on idf and coverage goes to the smaller id
        assert_eq!(pick.label, id(10));
    }

    #[test]
    fn single_member_single_parent() {
        let corpus = TaxonomyCorpus::from_taxonomies([tax(1, &[(1, 10)]), tax(2, &[(2, 11)])]);
        let c = Cluster {
            members: vec![id(1)],
            centroid: SparseVector::new(),
        };
        let l = label_cluster(&c, &corpus, &LabelConfig::default()).unwrap();
        assert_eq!(
            (l.label, l.coverage, l.strategy),
            (id(10), 1.0, Strategy::Zlca)
        );
        let missing = Cluster {
            members: vec![id(7)],
            centroid: SparseVector::new(),
        };
        assert_eq!(
            label_cluster(&missing, &corpus, &LabelConfig::default()),
            Err(LabelError::MissingTaxonomy(id(7)))
        );
    }

    #[test]
    fn strategy_parse() {
        assert_eq!("MFI".parse::<Strategy>().unwrap(), Strategy::Mfi);
        assert_eq!(Strategy::Zlca.to_string(), "ZLCA");
        assert!("sp".parse::<Strategy>().is_err());
        assert!(LabelConfig {
            zeta: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
