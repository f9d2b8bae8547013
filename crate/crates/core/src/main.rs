use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use linkbox::config::PipelineConfig;
use linkbox::graph::{KnowledgeGraph, LoadOptions, NodeId, NodeKind};
use linkbox::labeler::Strategy;
use linkbox::metrics::overlap_distributions;
use linkbox::pipeline::{
    cluster_id, evaluate, facts_from_results, load_graph_dir, load_graph_files, read_judgments,
    read_truth, run_pipeline, write_graph_dir, write_jsonl,
};
use linkbox::relatedness::noise_distribution;
use linkbox::scheduler::{ArticleResult, Extractor, NodeTiming};
use linkbox::taxonomy::build_isa;

#[derive(Parser)]
#[command(
    name = "linkbox",
    version,
    about = "Summarize linked entities of encyclopedia articles into labeled clusters"
)]
struct Cli {
    /// Directory holding entities.tsv, links.tsv and categories.tsv.
    #[arg(long, global = true, default_value = ".")]
    data: PathBuf,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Drop dangling or invalid records with a warning instead of failing.
    #[arg(long, global = true)]
    lenient: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate raw TSV files and write a normalized graph directory.
    Ingest {
        #[arg(long)]
        entities: PathBuf,
        #[arg(long)]
        links: PathBuf,
        #[arg(long)]
        categories: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split linked entities into related and noise.
    Filter {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Dump the IsA taxonomy of one entity as JSON.
    Taxonomy {
        #[arg(long)]
        entity: String,
        #[arg(long)]
        alpha_edge: Option<f64>,
        #[arg(long)]
        max_depth: Option<usize>,
    },
    /// Cluster the related linked entities of articles.
    Cluster {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        clustering: ClusterFlags,
    },
    /// Cluster and label articles.
    Label {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        clustering: ClusterFlags,
        #[command(flatten)]
        labeling: LabelFlags,
    },
    /// Extract facts for articles, optionally reusing clusters along the
    /// inheritance forest.
    Extract {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, value_enum)]
        reuse: Option<Switch>,
        #[command(flatten)]
        clustering: ClusterFlags,
        #[command(flatten)]
        labeling: LabelFlags,
        /// Facts output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write per-article timing and reuse ratio as CSV.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Evaluate filtering, clustering and labeling.
    Eval {
        /// Ground-truth relatedness TSV: article, entity, related|unrelated.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Label judgments TSV: cluster_id, entity, 0|1.
        #[arg(long)]
        judgments: Option<PathBuf>,
        #[arg(long, value_enum)]
        reuse: Option<Switch>,
        #[command(flatten)]
        clustering: ClusterFlags,
    },
    /// Corpus statistics: noise distribution and neighborhood overlap.
    Stats {
        #[arg(long)]
        sr_threshold: Option<f64>,
        #[arg(long)]
        bins: Option<usize>,
        /// Largest hop distance for the k-hop overlap curve.
        #[arg(long, default_value_t = 3)]
        max_k: usize,
        /// Write the noise histogram as CSV here.
        #[arg(long)]
        noise_csv: Option<PathBuf>,
        /// Print the effective configuration as TOML and exit.
        #[arg(long)]
        print_config: bool,
    },
}

#[derive(Args)]
struct Target {
    #[arg(long, conflicts_with = "all")]
    article: Option<String>,
    #[arg(long)]
    all: bool,
}

#[derive(Args)]
struct ClusterFlags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    significance: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Args)]
struct LabelFlags {
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    max_level: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl ClusterFlags {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(s) = self.seed {
            cfg.cluster.rng_seed = s;
        }
        if let Some(a) = self.significance {
            cfg.cluster.significance = a;
        }
        if let Some(i) = self.max_iter {
            cfg.cluster.max_iter = i;
        }
    }
}

impl LabelFlags {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(s) = self.strategy {
            cfg.label.strategy = s;
        }
        if let Some(z) = self.zeta {
            cfg.label.zeta = z;
        }
        if let Some(l) = self.max_level {
            cfg.label.max_level = l;
        }
    }
}

fn articles(g: &KnowledgeGraph, t: &Target) -> Result<Vec<NodeId>> {
    match (&t.article, t.all) {
        (Some(name), _) => {
            let id = g.id(name)?;
            if g.kind(id) != NodeKind::Entity {
                bail!("`{name}` is a category, not an article");
            }
            Ok(vec![id])
        }
        (None, true) => Ok(g.articles().collect()),
        (None, false) => bail!("pass --article <id> or --all"),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn names(g: &KnowledgeGraph, ids: &[NodeId]) -> Vec<String> {
    ids.iter().map(|&i| g.name(i).to_string()).collect()
}

fn label_lines(g: &KnowledgeGraph, r: &ArticleResult) -> Vec<serde_json::Value> {
    r.clusters
        .iter()
        .enumerate()
        .map(|(i, c)| {
            json!({
                "cluster_id": cluster_id(g, r.article, i),
                "label": g.name(c.label),
                "coverage": c.coverage,
                "strategy": c.strategy,
                "members": names(g, &c.cluster.members),
            })
        })
        .collect()
}

fn write_timings(g: &KnowledgeGraph, timings: &[NodeTiming], path: &Path) -> Result<()> {
    let mut w = output(Some(path))?;
    writeln!(
        w,
        "article,level,parent,seconds,direct_seconds,reuse_ratio,inherited,fresh"
    )?;
    let mut rows: Vec<&NodeTiming> = timings.iter().collect();
    rows.sort_by_key(|t| (t.level, t.article));
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for t in rows {
        writeln!(
            w,
            "{},{},{},{:.6},{},{},{},{}",
            g.name(t.article),
            t.level,
            t.parent.map(|p| g.name(p).to_string()).unwrap_or_default(),
            t.seconds,
            opt(t.direct_seconds),
            opt(t.reuse_ratio()),
            t.inherited,
            t.fresh
        )?;
    }
    w.flush()?;
    Ok(())
}

fn apply_stats_flags(
    cfg: &mut PipelineConfig,
    sr_threshold: Option<f64>,
    bins: Option<usize>,
) -> Result<()> {
    if let Some(t) = sr_threshold {
        cfg.stats.sr_threshold = t;
    }
    if let Some(b) = bins {
        cfg.stats.histogram_bins = b;
    }
    cfg.validate()?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let opts = LoadOptions {
        strict: !cli.lenient,
    };
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };

    if let Command::Ingest {
        entities,
        links,
        categories,
        out,
    } = &cli.command
    {
        let g = load_graph_files(entities, links, categories, opts)?;
        write_graph_dir(&g, out)?;
        let summary = json!({
            "nodes": g.node_count(),
            "entities": g.entities().count(),
            "articles": g.articles().count(),
            "links": g.articles().map(|a| g.linked_entities(a).len()).sum::<usize>(),
        });
        println!("{summary}");
        return Ok(());
    }

    if let Command::Stats {
        sr_threshold,
        bins,
        print_config: true,
        ..
    } = &cli.command
    {
        apply_stats_flags(&mut cfg, *sr_threshold, *bins)?;
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }

    let g = load_graph_dir(&cli.data, opts)
        .with_context(|| format!("loading graph from {}", cli.data.display()))?;
    match &cli.command {
        Command::Ingest { .. } => unreachable!(),
        Command::Filter {
            target,
            beta,
            threshold,
        } => {
            if let Some(b) = beta {
                cfg.aggregation.beta = *b;
            }
            if let Some(t) = threshold {
                cfg.aggregation.threshold = *t;
            }
            cfg.validate()?;
            let ex = Extractor::new(&g, &cfg);
            let mut lines = Vec::new();
            for a in articles(&g, target)? {
                let f = ex.filter(a);
                let scores: BTreeMap<&str, f64> =
                    f.scores.iter().map(|(&e, &s)| (g.name(e), s)).collect();
                lines.push(json!({
                    "article": g.name(a),
                    "related": names(&g, &f.related),
                    "noise": names(&g, &f.noise),
                    "scores": scores,
                }));
            }
            write_jsonl(&lines, output(None)?)?;
        }
        Command::Taxonomy {
            entity,
            alpha_edge,
            max_depth,
        } => {
            if let Some(a) = alpha_edge {
                cfg.taxonomy.alpha_edge = *a;
            }
            if let Some(d) = max_depth {
                cfg.taxonomy.max_depth = *d;
            }
            cfg.validate()?;
            let tax = build_isa(&g, g.id(entity)?, &cfg.taxonomy);
            println!("{}", serde_json::to_string_pretty(&tax.to_json(&g))?);
        }
        Command::Cluster { target, clustering } => {
            clustering.apply(&mut cfg);
            cfg.validate()?;
            let ex = Extractor::new(&g, &cfg);
            let mut lines = Vec::new();
            for a in articles(&g, target)? {
                let r = ex.cluster_direct(a)?;
                for (i, c) in r.clusters.iter().enumerate() {
                    lines.push(json!({
                        "cluster_id": cluster_id(&g, a, i),
                        "article": g.name(a),
                        "members": names(&g, &c.cluster.members),
                    }));
                }
            }
            write_jsonl(&lines, output(None)?)?;
        }
        Command::Label {
            target,
            clustering,
            labeling,
        } => {
            clustering.apply(&mut cfg);
            labeling.apply(&mut cfg);
            cfg.validate()?;
            let ex = Extractor::new(&g, &cfg);
            let mut lines = Vec::new();
            for a in articles(&g, target)? {
                lines.extend(label_lines(&g, &ex.cluster_direct(a)?));
            }
            write_jsonl(&lines, output(None)?)?;
        }
        Command::Extract {
            target,
            tau,
            reuse,
            clustering,
            labeling,
            out,
            stats,
        } => {
            if let Some(t) = tau {
                cfg.ecg.tau = *t;
            }
            if let Some(r) = reuse {
                cfg.reuse = matches!(r, Switch::On);
            }
            clustering.apply(&mut cfg);
            labeling.apply(&mut cfg);
            cfg.validate()?;
            let facts = if target.all {
                let run = run_pipeline(&g, &cfg, stats.is_some())?;
                if let Some(p) = stats {
                    write_timings(&g, &run.report.timings, p)?;
                }
                log::info!(
                    "{} articles, peak retained {}, levels {:?}",
                    run.results.len(),
                    run.report.peak_retained,
                    run.report.level_sizes
                );
                run.facts
            } else {
                let ex = Extractor::new(&g, &cfg);
                let mut results = BTreeMap::new();
                for a in articles(&g, target)? {
                    results.insert(a, ex.cluster_direct(a)?);
                }
                facts_from_results(&g, &results)
            };
            let mut w = output(out.as_deref())?;
            write_jsonl(&facts, &mut w)?;
            w.flush()?;
        }
        Command::Eval {
            truth,
            judgments,
            reuse,
            clustering,
        } => {
            if let Some(r) = reuse {
                cfg.reuse = matches!(r, Switch::On);
            }
            clustering.apply(&mut cfg);
            cfg.validate()?;
            let truth = truth.as_deref().map(read_truth).transpose()?;
            let judgments = judgments.as_deref().map(read_judgments).transpose()?;
            let run = run_pipeline(&g, &cfg, false)?;
            let ex = Extractor::new(&g, &cfg);
            let report = evaluate(&ex, &run.results, truth.as_ref(), judgments.as_ref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Stats {
            sr_threshold,
            bins,
            max_k,
            noise_csv,
            ..
        } => {
            apply_stats_flags(&mut cfg, *sr_threshold, *bins)?;
            let hist = noise_distribution(&g, cfg.stats.sr_threshold, cfg.stats.histogram_bins);
            if let Some(p) = noise_csv {
                std::fs::write(p, hist.to_csv())
                    .with_context(|| format!("writing {}", p.display()))?;
            }
            let overlap = overlap_distributions(&g, cfg.ecg.neighborhood, *max_k);
            let mean_noise = if hist.samples.is_empty() {
                None
            } else {
                Some(hist.samples.iter().sum::<f64>() / hist.samples.len() as f64)
            };
            let report = json!({
                "nodes": g.node_count(),
                "entities": g.entities().count(),
                "articles": g.articles().count(),
                "mean_noisy_fraction": mean_noise,
                "noise_cumulative": hist.cumulative(),
                "max_overlap_cdf": overlap.cdf,
                "khop_overlap": overlap.khop,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}
