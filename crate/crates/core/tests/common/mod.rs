#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use linkbox::graph::{GraphBuilder, KnowledgeGraph, NodeId};
use linkbox::scheduler::ArticleResult;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOPICS: usize = 12;
pub const TOPIC_SIZE: usize = 10;
pub const FILLERS: usize = 16;
pub const ARTICLES: usize = 30;

pub fn topic_entity(t: usize, j: usize) -> String {
    format!("t{t:02}_e{j}")
}

pub fn topic_category(t: usize) -> String {
    format!("topic{t:02} widgets")
}

/// Thirty articles built from whole topic blocks. Entities of a topic share
/// one category, link to some of their peers, and neighboring articles share
/// topics. Uncategorized filler entities are linked from every article.
pub fn synthetic_builder(seed: u64) -> GraphBuilder {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new();
    b.category("widgets");
    for t in 0..TOPICS {
        let cat = topic_category(t);
        b.category(&cat).categorize(&cat, "widgets");
        for j in 0..TOPIC_SIZE {
            let e = topic_entity(t, j);
            b.entity(&e).categorize(&e, &cat);
        }
        for j in 0..TOPIC_SIZE {
            for step in 1..=3 {
                b.link(
                    &topic_entity(t, j),
                    &topic_entity(t, (j + step) % TOPIC_SIZE),
                );
            }
        }
    }
    let fillers: Vec<String> = (0..FILLERS).map(|i| format!("filler{i:02}")).collect();
    for f in &fillers {
        b.entity(f);
    }
    let names: Vec<String> = (0..ARTICLES).map(|i| format!("article{i:02}")).collect();
    for a in &names {
        b.entity(a);
    }
    for (i, a) in names.iter().enumerate() {
        let mut topics = BTreeSet::from([i % TOPICS, (i + 1) % TOPICS]);
        if rng.gen_bool(0.5) {
            topics.insert(rng.gen_range(0..TOPICS));
        }
        for &t in &topics {
            for j in 0..TOPIC_SIZE {
                b.link(a, &topic_entity(t, j));
            }
        }
        let mut picked = fillers.clone();
        picked.shuffle(&mut rng);
        for f in &picked[..12] {
            b.link(a, f);
        }
        if i > 0 {
            b.link(a, &names[i - 1]);
        }
        let other = rng.gen_range(0..ARTICLES);
        if other != i {
            b.link(a, &names[other]);
        }
    }
    b
}

pub fn synthetic_graph(seed: u64) -> KnowledgeGraph {
    synthetic_builder(seed).build().expect("fixture is valid")
}

pub type Normalized = BTreeMap<String, BTreeMap<String, BTreeSet<String>>>;

/// Per article, label -> union of members over all clusters with that label.
pub fn normalize(g: &KnowledgeGraph, results: &BTreeMap<NodeId, ArticleResult>) -> Normalized {
    results
        .values()
        .map(|r| {
            let mut by_label: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
            for c in &r.clusters {
                by_label
                    .entry(g.name(c.label).to_string())
                    .or_default()
                    .extend(c.cluster.members.iter().map(|&m| g.name(m).to_string()));
            }
            (g.name(r.article).to_string(), by_label)
        })
        .collect()
}

/// True when the clusters of `r` are nonempty, disjoint and cover `expected`.
pub fn is_partition(r: &ArticleResult, expected: &[NodeId]) -> bool {
    let mut seen = BTreeSet::new();
    for c in &r.clusters {
        if c.cluster.members.is_empty() {
            return false;
        }
        for &m in &c.cluster.members {
            if !seen.insert(m) {
                return false;
            }
        }
    }
    seen.into_iter().collect::<Vec<_>>() == expected
}
