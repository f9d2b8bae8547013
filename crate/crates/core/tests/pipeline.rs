mod common;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use linkbox::config::PipelineConfig;
use linkbox::graph::{GraphBuilder, KnowledgeGraph, LoadOptions};
use linkbox::pipeline::{load_graph_dir, run_pipeline, write_graph_dir, write_jsonl, Fact};
use linkbox::scheduler::Extractor;
use linkbox::taxonomy::{build_isa, TaxonomyConfig};
use proptest::prelude::*;

fn two_topic_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/two_topic")
}

fn two_topic() -> KnowledgeGraph {
    load_graph_dir(&two_topic_dir(), LoadOptions::default()).unwrap()
}

fn names(
    g: &KnowledgeGraph,
    ids: impl IntoIterator<Item = linkbox::graph::NodeId>,
) -> BTreeSet<String> {
    ids.into_iter().map(|i| g.name(i).to_string()).collect()
}

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn facts_jsonl(facts: &[Fact]) -> String {
    let mut buf = Vec::new();
    write_jsonl(facts, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn two_topic_loads() {
    let g = two_topic();
    assert_eq!(g.node_count(), 24);
    assert_eq!(g.entities().count(), 18);
    assert_eq!(g.article_count(), 18);
    assert_eq!(g.articles().count(), 14);
    let touring = g.id("Touring England").unwrap();
    assert_eq!(g.linked_entities(touring).len(), 13);
}

#[test]
fn two_topic_filter_drops_castles_tied_to_other_counties() {
    let g = two_topic();
    let ex = Extractor::new(&g, &PipelineConfig::default());
    let touring = ex.filter(g.id("Touring England").unwrap());
    assert_eq!(
        names(&g, touring.noise.iter().copied()),
        set(&["Warwick Castle", "Windsor Castle"])
    );
    let walking = ex.filter(g.id("Walking England").unwrap());
    assert_eq!(
        names(&g, walking.noise.iter().copied()),
        set(&["Warwick Castle", "Windsor Castle", "Yorkshire"])
    );
}

#[test]
fn two_topic_taxonomy_and_idf() {
    let g = two_topic();
    let t = build_isa(&g, g.id("Thames").unwrap(), &TaxonomyConfig::default());
    assert_eq!(
        names(&g, t.nodes().iter().copied()),
        set(&["England", "Rivers", "Rivers of England"])
    );
    let conf = |c: &str| t.path_confidence(g.id(c).unwrap()).unwrap();
    assert_eq!(conf("Rivers of England"), 1.0);
    assert_eq!(conf("Rivers"), 0.5);
    assert_eq!(conf("England"), 0.5);

    // 6 rivers, 6 castles and 4 counties are linked from some article
    let ex = Extractor::new(&g, &PipelineConfig::default());
    let idf = |c: &str| ex.corpus().idf(g.id(c).unwrap());
    assert_eq!(ex.corpus().len(), 16);
    assert!((idf("Rivers of England") - (16.0f64 / 6.0).ln()).abs() < 1e-12);
    assert!((idf("Counties of England") - (16.0f64 / 4.0).ln()).abs() < 1e-12);
    assert_eq!(idf("England"), 0.0);
}

#[test]
fn two_topic_direct_clusters() {
    let g = two_topic();
    let cfg = PipelineConfig {
        reuse: false,
        ..Default::default()
    };
    let out = run_pipeline(&g, &cfg, false).unwrap();
    let expected = std::fs::read_to_string(two_topic_dir().join("facts_direct.jsonl")).unwrap();
    assert_eq!(facts_jsonl(&out.facts), expected);
    let touring = &out.results[&g.id("Touring England").unwrap()];
    let labels = names(&g, touring.clusters.iter().map(|c| c.label));
    assert_eq!(
        labels,
        set(&[
            "Castles in England",
            "Counties of England",
            "Rivers of England"
        ])
    );
}

#[test]
fn two_topic_reuse_facts() {
    let g = two_topic();
    let out = run_pipeline(&g, &PipelineConfig::default(), false).unwrap();
    let expected = std::fs::read_to_string(two_topic_dir().join("facts.jsonl")).unwrap();
    assert_eq!(facts_jsonl(&out.facts), expected);
    let walking = &out.results[&g.id("Walking England").unwrap()];
    assert_eq!(walking.inherited, 1);
    assert_eq!(walking.fresh, 9);
}

fn graph_strategy() -> impl Strategy<Value = GraphBuilder> {
    (1usize..12, 1usize..6).prop_flat_map(|(ne, nc)| {
        (
            Just(ne),
            Just(nc),
            prop::collection::vec((0..ne, 0..ne), 0..30),
            prop::collection::vec((0..ne + nc, 0..nc), 0..20),
        )
            .prop_map(|(ne, nc, links, memberships)| {
                let mut b = GraphBuilder::new();
                for e in 0..ne {
                    b.entity(&format!("e {e}"));
                }
                for c in 0..nc {
                    b.category(&format!("cat {c} things"));
                }
                let node = |i: usize| {
                    if i < ne {
                        format!("e {i}")
                    } else {
                        format!("cat {} things", i - ne)
                    }
                };
                for (s, t) in links {
                    if s != t {
                        b.link(&node(s), &node(t));
                    }
                }
                for (n, c) in memberships {
                    let cat = format!("cat {c} things");
                    if node(n) != cat {
                        b.categorize(&node(n), &cat);
                    }
                }
                b
            })
    })
}

type Pairs<T> = BTreeSet<(String, T)>;

fn edges(g: &KnowledgeGraph) -> (Pairs<&'static str>, Pairs<String>, Pairs<String>) {
    let nodes = g
        .nodes()
        .map(|n| (g.name(n).to_string(), g.kind(n).as_str()))
        .collect();
    let links = g
        .nodes()
        .flat_map(|n| {
            g.linked_entities(n)
                .iter()
                .map(move |&t| (g.name(n).to_string(), g.name(t).to_string()))
        })
        .collect();
    let cats = g
        .nodes()
        .flat_map(|n| {
            g.categories(n)
                .iter()
                .map(move |&c| (g.name(n).to_string(), g.name(c).to_string()))
        })
        .collect();
    (nodes, links, cats)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn graph_directory_round_trips(b in graph_strategy()) {
        let g = b.build().unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_graph_dir(&g, dir.path()).unwrap();
        let back = load_graph_dir(dir.path(), LoadOptions::default()).unwrap();
        prop_assert_eq!(edges(&g), edges(&back));
    }

    #[test]
    fn taxonomies_are_acyclic_and_depth_bounded(b in graph_strategy(), max_depth in 1usize..5) {
        let g = b.build().unwrap();
        let cfg = TaxonomyConfig { max_depth, ..Default::default() };
        for e in g.entities() {
            let t = build_isa(&g, e, &cfg);
            let order = t.topological_order();
            prop_assert!(order.is_ok());
            // every category is within max_depth hops of the root
            let mut depth = std::collections::BTreeMap::from([(e, 0usize)]);
            for n in order.unwrap() {
                let d = depth.get(&n).copied();
                prop_assert!(d.is_some());
                let d = d.unwrap();
                prop_assert!(d <= max_depth);
                for p in t.parents(n) {
                    let entry = depth.entry(p).or_insert(usize::MAX);
                    *entry = (*entry).min(d + 1);
                }
            }
            for c in t.nodes() {
                let conf = t.path_confidence(*c).unwrap();
                prop_assert!(conf > cfg.alpha_edge.powi(max_depth as i32) - 1e-12 && conf <= 1.0);
            }
        }
    }
}
