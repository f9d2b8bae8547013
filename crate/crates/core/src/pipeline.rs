//! End-to-end runs: load a graph directory, extract clustered facts for every
//! article, and evaluate the results.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig};
use crate::graph::{GraphError, KnowledgeGraph, LoadOptions, NodeId};
use crate::metrics::{
    closeness, m_at_k_curve, precision_pcl, truth_curve, valid_index, MetricError,
};
use crate::scheduler::{
    batch_extract, ArticleResult, BatchOptions, BatchReport, Extractor, SchedulerError,
};

pub const ENTITIES_FILE: &str = "entities.tsv";
pub const LINKS_FILE: &str = "links.tsv";
pub const CATEGORIES_FILE: &str = "categories.tsv";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
}

fn open(path: &Path) -> Result<BufReader<File>, PipelineError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })
}

pub fn load_graph_files(
    entities: &Path,
    links: &Path,
    categories: &Path,
    opts: LoadOptions,
) -> Result<KnowledgeGraph, PipelineError> {
    Ok(KnowledgeGraph::load(
        open(entities)?,
        open(links)?,
        open(categories)?,
        opts,
    )?)
}

/// Loads `entities.tsv`, `links.tsv` and `categories.tsv` from `dir`.
pub fn load_graph_dir(dir: &Path, opts: LoadOptions) -> Result<KnowledgeGraph, PipelineError> {
    load_graph_files(
        &dir.join(ENTITIES_FILE),
        &dir.join(LINKS_FILE),
        &dir.join(CATEGORIES_FILE),
        opts,
    )
}

pub fn write_graph_dir(g: &KnowledgeGraph, dir: &Path) -> Result<(), PipelineError> {
    let io = |path: &Path| {
        let p = path.display().to_string();
        move |source| PipelineError::Io { path: p, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let write = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| {
        let path = dir.join(name);
        let mut buf = Vec::new();
        f(&mut buf).map_err(io(&path))?;
        std::fs::write(&path, buf).map_err(io(&path))
    };
    write(ENTITIES_FILE, &|b| g.write_entities(b))?;
    write(LINKS_FILE, &|b| g.write_links(b))?;
    write(CATEGORIES_FILE, &|b| g.write_categories(b))?;
    Ok(())
}

/// One extracted property of an article.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Fact {
    pub article: String,
    pub property: String,
    pub values: Vec<String>,
}

pub fn cluster_id(g: &KnowledgeGraph, article: NodeId, index: usize) -> String {
    format!("{}#{index}", g.name(article))
}

/// Flattens results into facts, one per labeled cluster, sorted.
pub fn facts_from_results(
    g: &KnowledgeGraph,
    results: &BTreeMap<NodeId, ArticleResult>,
) -> Vec<Fact> {
    let mut facts: Vec<Fact> = results
        .values()
        .flat_map(|r| {
            r.clusters.iter().map(|c| {
                let mut values: Vec<String> = c
                    .cluster
                    .members
                    .iter()
                    .map(|&m| g.name(m).to_string())
                    .collect();
                values.sort();
                Fact {
                    article: g.name(r.article).to_string(),
                    property: g.name(c.label).to_string(),
                    values,
                }
            })
        })
        .collect();
    facts.sort();
    facts
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut w: W) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub struct PipelineOutput {
    pub results: BTreeMap<NodeId, ArticleResult>,
    pub facts: Vec<Fact>,
    pub report: BatchReport,
}

/// Filters, clusters and labels every article of `g`.
pub fn run_pipeline(
    g: &KnowledgeGraph,
    cfg: &PipelineConfig,
    measure_direct: bool,
) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    let ex = Extractor::new(g, cfg);
    let (results, report) = batch_extract(
        &ex,
        BatchOptions {
            reuse: cfg.reuse,
            measure_direct,
        },
    )?;
    let facts = facts_from_results(g, &results);
    Ok(PipelineOutput {
        results,
        facts,
        report,
    })
}

fn tsv_records(path: &Path, fields: usize) -> Result<Vec<(usize, Vec<String>)>, PipelineError> {
    let file = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|source| PipelineError::Io {
            path: file.clone(),
            source,
        })?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parts: Vec<String> = trimmed.split('\t').map(str::to_string).collect();
        if parts.len() != fields {
            return Err(PipelineError::Parse {
                file: file.clone(),
                line: i + 1,
                message: format!(
                    "expected {fields} tab-separated fields, found {}",
                    parts.len()
                ),
            });
        }
        out.push((i + 1, parts));
    }
    Ok(out)
}

/// Ground-truth relatedness: per article, the entities judged related and
/// those judged unrelated.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Truth {
    pub related: BTreeMap<String, BTreeSet<String>>,
    pub unrelated: BTreeMap<String, BTreeSet<String>>,
}

pub fn read_truth(path: &Path) -> Result<Truth, PipelineError> {
    let mut t = Truth::default();
    for (line, r) in tsv_records(path, 3)? {
        let target = match r[2].as_str() {
            "related" => &mut t.related,
            "unrelated" => &mut t.unrelated,
            other => {
                return Err(PipelineError::Parse {
                    file: path.display().to_string(),
                    line,
                    message: format!("expected related or unrelated, found `{other}`"),
                })
            }
        };
        target.entry(r[0].clone()).or_default().insert(r[1].clone());
    }
    Ok(t)
}

pub type Judgments = HashMap<(String, String), bool>;

pub fn read_judgments(path: &Path) -> Result<Judgments, PipelineError> {
    let mut j = Judgments::new();
    for (line, r) in tsv_records(path, 3)? {
        let ok = match r[2].as_str() {
            "1" => true,
            "0" => false,
            other => {
                return Err(PipelineError::Parse {
                    file: path.display().to_string(),
                    line,
                    message: format!("expected 0 or 1, found `{other}`"),
                })
            }
        };
        j.insert((r[0].clone(), r[1].clone()), ok);
    }
    Ok(j)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    /// Mean inter-cluster distance over articles with two or more clusters.
    pub inter: Option<f64>,
    pub intra: Option<f64>,
    pub valid: Option<f64>,
    pub clustered_articles: usize,
    /// Mean `M@K` over articles with ground truth; `K` beyond an article's
    /// length counts the whole ordering.
    pub m_at_k: BTreeMap<usize, f64>,
    pub closeness: Option<f64>,
    pub ranked_articles: usize,
    pub precision: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn evaluate(
    ex: &Extractor<'_>,
    results: &BTreeMap<NodeId, ArticleResult>,
    truth: Option<&Truth>,
    judgments: Option<&Judgments>,
) -> Result<EvalReport, PipelineError> {
    let g = ex.graph();
    let mut report = EvalReport::default();

    let (mut inters, mut intras) = (Vec::new(), Vec::new());
    for r in results.values().filter(|r| r.clusters.len() >= 2) {
        let groups: Vec<_> = r
            .clusters
            .iter()
            .map(|c| {
                c.cluster
                    .members
                    .iter()
                    .filter_map(|&m| ex.feature(m).cloned())
                    .collect()
            })
            .collect();
        let v = valid_index(&groups)?;
        inters.push(v.inter);
        intras.push(v.intra);
    }
    report.clustered_articles = inters.len();
    report.inter = mean(&inters);
    report.intra = mean(&intras);
    report.valid = match (report.inter, report.intra) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        (Some(_), Some(_)) => Some(f64::INFINITY),
        _ => None,
    };

    if let Some(truth) = truth {
        let mut curves = Vec::new();
        let mut close = Vec::new();
        for (article, related) in &truth.related {
            let Some(a) = g.node(article) else { continue };
            let ordering = ex.filter(a).ordering;
            let ids: BTreeSet<NodeId> = related.iter().filter_map(|e| g.node(e)).collect();
            if ids.is_empty() || ordering.is_empty() {
                continue;
            }
            let curve = m_at_k_curve(&ordering, &ids)?;
            let reference = truth_curve(ids.len(), ordering.len())?;
            if let Ok(c) = closeness(&curve, &reference, 1, ordering.len()) {
                close.push(c);
            }
            curves.push(curve);
        }
        report.ranked_articles = curves.len();
        let longest = curves.iter().map(|c| c.len() - 1).max().unwrap_or(0);
        for k in 1..=longest {
            let at: Vec<f64> = curves.iter().map(|c| c[k.min(c.len() - 1)]).collect();
            report.m_at_k.insert(k, mean(&at).unwrap_or(0.0));
        }
        report.closeness = mean(&close);
    }

    if let Some(j) = judgments {
        let clusters: Vec<(String, Vec<String>)> = results
            .values()
            .flat_map(|r| {
                r.clusters.iter().enumerate().map(|(i, c)| {
                    (
                        cluster_id(g, r.article, i),
                        c.cluster
                            .members
                            .iter()
                            .map(|&m| g.name(m).to_string())
                            .collect(),
                    )
                })
            })
            .collect();
        report.precision = Some(precision_pcl(&clusters, j)?);
    }
    Ok(report)
}
