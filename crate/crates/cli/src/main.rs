//! `frontier-sim`: run crawls, evaluate and compare traces, generate
//! synthetic corpora, and reshape comparison output for plotting.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime error.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use config::{existing, parse_named, pick, pick_list, require, ExperimentConfig, Named};
use frontier_sim::corpus::{load_documents, load_edge_list, load_qrels, load_queries, load_seeds, DocumentStore, Qrels, QuerySet, WebGraph};
use frontier_sim::experiment::{
    compare, eval_rows, evaluate_trace, read_csv, report, write_csv, ComparisonRow, EvalOptions,
    QuerySetInput, SpeedupRow, COMPARISON_COLUMNS, EVAL_COLUMNS, REPORT_COLUMNS, SPEEDUP_COLUMNS,
};
use frontier_sim::metrics::{DcgScale, DEFAULT_ALPHA};
use frontier_sim::policy::PolicyKind;
use frontier_sim::quality::load_quality_table;
use frontier_sim::simulator::{read_trace, run_crawl, write_trace, CrawlTrace, SimConfig};
use frontier_sim::synthgen::{generate, DegreeDistribution, SynthConfig};

/// Bad user input; maps to exit code 1.
#[derive(Debug)]
pub struct Validation(pub String);

impl std::fmt::Display for Validation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Validation {}

#[derive(Parser)]
#[command(name = "frontier-sim", version, about = "Crawl simulation for quality-driven frontier policies")]
struct Cli {
    /// Flat TOML file with defaults for any flag; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Crawl a graph under one or more policies and write a trace per policy.
    Run(RunArgs),
    /// Per-checkpoint metrics for a single trace.
    Eval(EvalArgs),
    /// Metrics for several traces with significance against a baseline.
    Compare(CompareArgs),
    /// Generate a synthetic quality-assortative corpus.
    GenSynth(SynthArgs),
    /// Reshape comparison output into one observation per row.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    seeds: Option<PathBuf>,
    #[arg(long)]
    quality: Option<PathBuf>,
    /// Score for pages missing from the quality file.
    #[arg(long)]
    default_quality: Option<f64>,
    /// Policy name (bfs, qoracle, qfirst, qmin); repeat or comma-separate.
    #[arg(long = "policy", value_delimiter = ',')]
    policies: Vec<String>,
    /// Checkpoint interval in pages.
    #[arg(long = "T", visible_alias = "checkpoint-interval")]
    checkpoint_interval: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    /// Recorded in the trace header.
    #[arg(long)]
    rng_seed: Option<u64>,
    /// Relevance judgments; when given, the final harvest rate is logged.
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Output file; only with a single policy.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for `trace.<policy>.tsv` files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct JudgedArgs {
    #[arg(long)]
    graph: Option<PathBuf>,
    /// `name=path` or path; repeatable.
    #[arg(long)]
    qrels: Vec<String>,
    /// `name=path` or path, matched to qrels by name; needed for ndcg@10.
    #[arg(long)]
    queries: Vec<String>,
    /// Page text (`docid<TAB>text`); needed for ndcg@10.
    #[arg(long)]
    docs: Option<PathBuf>,
    /// Report max_ndcg divided by the ideal DCG over all relevant pages.
    #[arg(long)]
    normalized_max_ndcg: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    judged: JudgedArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Trace files; repeatable.
    #[arg(long = "trace")]
    traces: Vec<PathBuf>,
    #[command(flatten)]
    judged: JudgedArgs,
    #[arg(long)]
    baseline: Option<String>,
    /// Significance level.
    #[arg(long)]
    alpha: Option<f64>,
    /// Receives comparison.csv and speedups.csv.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    num_pages: Option<usize>,
    #[arg(long)]
    avg_out_degree: Option<f64>,
    #[arg(long)]
    power_law: bool,
    #[arg(long)]
    assortativity: Option<f64>,
    #[arg(long)]
    high_quality_fraction: Option<f64>,
    #[arg(long)]
    relevant_fraction: Option<f64>,
    #[arg(long)]
    queries_per_set: Option<usize>,
    #[arg(long)]
    num_seeds: Option<usize>,
    #[arg(long)]
    no_docs: bool,
    #[arg(long)]
    rng_seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    comparison: PathBuf,
    #[arg(long)]
    speedups: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Validation>() {
            return 1;
        }
        if let Some(core) = cause.downcast_ref::<frontier_sim::Error>() {
            return if core.is_validation() { 1 } else { 2 };
        }
    }
    2
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenSynth(args) => gen_synth(args, cli.config.as_deref()),
        command => {
            let cfg = ExperimentConfig::load(cli.config.as_deref())?;
            match command {
                Command::Run(args) => run(args, cfg),
                Command::Eval(args) => eval(args, cfg),
                Command::Compare(args) => compare_cmd(args, cfg),
                Command::Report(args) => report_cmd(args),
                Command::GenSynth(_) => unreachable!(),
            }
        }
    }
}

fn parse_policies(names: &[String]) -> anyhow::Result<Vec<PolicyKind>> {
    let mut out: Vec<PolicyKind> = Vec::new();
    for n in names {
        let p: PolicyKind = n.parse()?;
        if out.contains(&p) {
            return Err(Validation(format!("policy {p} given twice")).into());
        }
        out.push(p);
    }
    if out.is_empty() {
        return Err(Validation("no policy given".into()).into());
    }
    Ok(out)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn run(args: RunArgs, cfg: ExperimentConfig) -> anyhow::Result<()> {
    // Validate everything before touching the inputs.
    let policies = parse_policies(&pick_list(args.policies, cfg.policies))?;
    let graph_path = existing(require(pick(args.graph, cfg.graph), "graph")?)?;
    let seeds_path = existing(require(pick(args.seeds, cfg.seeds), "seeds")?)?;
    let quality_path = pick(args.quality, cfg.quality).map(existing).transpose()?;
    if quality_path.is_none() && policies.iter().any(|p| *p != PolicyKind::Bfs) {
        return Err(Validation("quality-driven policies need `quality`".into()).into());
    }
    let qrels_path = args.qrels.map(existing).transpose()?;
    let budget = require(pick(args.budget, cfg.budget), "budget")?;
    let interval = require(pick(args.checkpoint_interval, cfg.checkpoint_interval), "checkpoint_interval")?;
    let mut sim = SimConfig::new(policies[0], interval, budget);
    sim.rng_seed = pick(args.rng_seed, cfg.rng_seed).unwrap_or(0);
    sim.validate()?;
    let outputs: Vec<PathBuf> = match (args.out, pick(args.out_dir, cfg.out_dir)) {
        (Some(out), _) if policies.len() == 1 => vec![out],
        (Some(_), _) => return Err(Validation("--out takes a single policy; use --out-dir".into()).into()),
        (None, Some(dir)) => policies.iter().map(|p| dir.join(format!("trace.{p}.tsv"))).collect(),
        (None, None) => return Err(Validation("missing `out` or `out_dir`".into()).into()),
    };

    let graph = load_edge_list(&graph_path)?;
    let seeds = load_seeds(&seeds_path, &graph)?;
    let default_quality = pick(args.default_quality, cfg.default_quality).unwrap_or(0.0);
    let quality = match &quality_path {
        Some(p) => load_quality_table(p, &graph, default_quality)?,
        None => frontier_sim::quality::QualityTable::constant(graph.num_pages(), 0.0)?,
    };
    let qrels = qrels_path.map(|p| load_qrels(&p, &graph)).transpose()?;
    info!(
        "graph {}: {} pages, {} edges, {} seeds",
        graph.digest(),
        graph.num_pages(),
        graph.num_edges(),
        seeds.len()
    );

    let traces: Vec<CrawlTrace> = std::thread::scope(|s| {
        let handles: Vec<_> = policies
            .iter()
            .map(|&policy| {
                let (graph, seeds, quality) = (&graph, &seeds, &quality);
                s.spawn(move || run_crawl(graph, seeds, quality, SimConfig { policy, ..sim }))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("crawl thread panicked"))
            .collect::<Result<_, _>>()
    })?;
    for (trace, path) in traces.iter().zip(&outputs) {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        write_trace(trace, &graph, path)?;
        let hr = qrels.as_ref().map(|q| {
            let hits = trace.order.iter().filter(|p| q.is_relevant(**p)).count();
            format!(", harvest rate {:.4}", hits as f64 / trace.len().max(1) as f64)
        });
        info!(
            "{}: crawled {} pages, frontier peak {}{} -> {}",
            trace.policy(),
            trace.len(),
            trace.stats.frontier_peak,
            hr.unwrap_or_default(),
            path.display()
        );
    }
    Ok(())
}

struct JudgedInputs {
    graph: WebGraph,
    sets: Vec<(String, Qrels, Option<QuerySet>)>,
    docs: Option<DocumentStore>,
    scale: DcgScale,
}

impl JudgedInputs {
    fn load(args: JudgedArgs, cfg: &ExperimentConfig) -> anyhow::Result<Self> {
        let graph_path = existing(require(pick(args.graph, cfg.graph.clone()), "graph")?)?;
        let qrels: Vec<Named> = pick_list(args.qrels, cfg.qrels.clone()).iter().map(|s| parse_named(s)).collect();
        if qrels.is_empty() {
            return Err(Validation("missing `qrels`".into()).into());
        }
        let queries: Vec<Named> = pick_list(args.queries, cfg.queries.clone()).iter().map(|s| parse_named(s)).collect();
        for n in qrels.iter().chain(&queries) {
            existing(n.path.clone())?;
        }
        for q in &queries {
            if !qrels.iter().any(|r| r.name == q.name) {
                return Err(Validation(format!("queries {:?} have no qrels of the same name", q.name)).into());
            }
        }
        let docs_path = pick(args.docs, cfg.docs.clone()).map(existing).transpose()?;
        let normalized = args.normalized_max_ndcg || cfg.normalized_max_ndcg.unwrap_or(false);

        let graph = load_edge_list(&graph_path)?;
        let mut sets = Vec::new();
        for r in &qrels {
            let judged = load_qrels(&r.path, &graph)?;
            let qs = queries
                .iter()
                .find(|q| q.name == r.name)
                .map(|q| load_queries(&q.path))
                .transpose()?;
            sets.push((r.name.clone(), judged, qs));
        }
        let docs = docs_path.map(|p| load_documents(&p, &graph)).transpose()?;
        Ok(JudgedInputs {
            graph,
            sets,
            docs,
            scale: if normalized { DcgScale::Normalized } else { DcgScale::Raw },
        })
    }

    fn query_sets(&self) -> Vec<QuerySetInput<'_>> {
        self.sets
            .iter()
            .map(|(name, qrels, queries)| QuerySetInput {
                name,
                qrels,
                queries: queries.as_ref(),
            })
            .collect()
    }
}

fn eval(args: EvalArgs, cfg: ExperimentConfig) -> anyhow::Result<()> {
    let trace_path = existing(args.trace)?;
    let inputs = JudgedInputs::load(args.judged, &cfg)?;
    let trace = read_trace(&trace_path, &inputs.graph)?;
    let e = evaluate_trace(&trace, &inputs.query_sets(), inputs.docs.as_ref(), inputs.scale)?;
    let rows = eval_rows(&e);
    write_csv(&EVAL_COLUMNS, &rows, create(&args.out)?)?;
    info!("{} rows -> {}", rows.len(), args.out.display());
    Ok(())
}

fn compare_cmd(args: CompareArgs, cfg: ExperimentConfig) -> anyhow::Result<()> {
    let trace_paths = pick_list(args.traces, cfg.traces.clone());
    if trace_paths.is_empty() {
        return Err(Validation("missing `traces`".into()).into());
    }
    let trace_paths = trace_paths.into_iter().map(existing).collect::<anyhow::Result<Vec<_>>>()?;
    let baseline: PolicyKind = pick(args.baseline, cfg.baseline.clone())
        .unwrap_or_else(|| "bfs".into())
        .parse()?;
    let alpha = pick(args.alpha, cfg.alpha).unwrap_or(DEFAULT_ALPHA);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Validation(format!("alpha {alpha} must be in (0, 1)")).into());
    }
    let out_dir = require(pick(args.out_dir, cfg.out_dir.clone()), "out_dir")?;
    let inputs = JudgedInputs::load(args.judged, &cfg)?;

    let traces = trace_paths
        .iter()
        .map(|p| read_trace(p, &inputs.graph))
        .collect::<Result<Vec<_>, _>>()?;
    let opts = EvalOptions {
        baseline,
        alpha,
        dcg_scale: inputs.scale,
    };
    let c = compare(&traces, &inputs.query_sets(), inputs.docs.as_ref(), &opts)?;
    write_csv(&COMPARISON_COLUMNS, &c.rows, create(&out_dir.join("comparison.csv"))?)?;
    write_csv(&SPEEDUP_COLUMNS, &c.speedups, create(&out_dir.join("speedups.csv"))?)?;
    for s in &c.speedups {
        let v = s.mean_speedup.map_or("undefined".to_string(), |v| format!("{v:.3}"));
        info!("{} vs {} on {}: mean speedup {v} over {} relevant pages", s.policy, s.baseline, s.query_set, s.n_max);
    }
    Ok(())
}

fn gen_synth(args: SynthArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let mut cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Validation(format!("config {}: {e}", p.display())))?;
            SynthConfig::from_toml(&text)?
        }
        None => SynthConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = args.$field { cfg.$field = v; } )* };
    }
    set!(num_pages, avg_out_degree, assortativity, high_quality_fraction, relevant_fraction, queries_per_set, num_seeds, rng_seed);
    if args.power_law {
        cfg.degree_distribution = DegreeDistribution::PowerLaw;
    }
    if args.no_docs {
        cfg.emit_documents = false;
    }
    cfg.validate()?;
    let corpus = generate(&cfg)?;
    let files = corpus.write_to_dir(&args.out_dir)?;
    let mut manifest = create(&args.out_dir.join("manifest.txt"))?;
    writeln!(manifest, "digest\t{}", corpus.graph.digest())?;
    writeln!(manifest, "pages\t{}", corpus.graph.num_pages())?;
    writeln!(manifest, "edges\t{}", corpus.graph.num_edges())?;
    writeln!(
        manifest,
        "class_assortativity\t{:.6}",
        frontier_sim::synthgen::class_assortativity(&corpus.graph, &corpus.high_quality)
    )?;
    writeln!(
        manifest,
        "quality_correlation\t{:.6}",
        frontier_sim::synthgen::quality_correlation(&corpus.graph, &corpus.quality)
    )?;
    let reach = frontier_sim::synthgen::reachable(&corpus.graph, &corpus.seeds);
    writeln!(
        manifest,
        "reachable_fraction\t{:.6}",
        reach.iter().filter(|r| **r).count() as f64 / reach.len() as f64
    )?;
    for set in [&corpus.strong, &corpus.weak] {
        let unreachable = set.qrels.relevant_union().iter().filter(|p| !reach[p.index()]).count();
        if unreachable > 0 {
            log::warn!("{}: {unreachable} relevant pages unreachable from seeds", set.name);
        }
        writeln!(manifest, "unreachable_relevant.{}\t{unreachable}", set.name)?;
    }
    for f in &files {
        writeln!(manifest, "file\t{f}")?;
    }
    manifest.flush()?;
    info!(
        "{} pages, {} edges -> {}",
        corpus.graph.num_pages(),
        corpus.graph.num_edges(),
        args.out_dir.display()
    );
    Ok(())
}

fn report_cmd(args: ReportArgs) -> anyhow::Result<()> {
    let open = |p: &Path| File::open(p).map_err(|e| Validation(format!("{}: {e}", p.display())));
    let rows: Vec<ComparisonRow> = read_csv(
        &COMPARISON_COLUMNS,
        &args.comparison.display().to_string(),
        open(&args.comparison)?,
    )?;
    let speedups: Vec<SpeedupRow> = match &args.speedups {
        Some(p) => read_csv(&SPEEDUP_COLUMNS, &p.display().to_string(), open(p)?)?,
        None => Vec::new(),
    };
    let out = report(&rows, &speedups);
    write_csv(&REPORT_COLUMNS, &out, create(&args.out)?)?;
    info!("{} observations -> {}", out.len(), args.out.display());
    Ok(())
}
