//! Sequential crawl simulation over a static graph.
//!
//! One page is crawled per time unit. Seeds are enqueued first with
//! [`SEED_PRIORITY`] in seed-file order; afterwards each crawled page's
//! out-links are pushed or re-prioritised according to the policy, in stored
//! out-link order. The loop has no randomness: identical inputs give
//! identical traces.
//!
//! Trace file layout:
//!
//! ```text
//! #frontier-sim-trace v1 digest=<hex> policy=<name> T=<n> budget=<n> rng_seed=<n>
//! <external key of the page crawled at t=1>
//! <external key of the page crawled at t=2>
//! ...
//! #checkpoints <t> <t> ...
//! #stats frontier_peak=<n> rediscoveries=<n> priority_updates=<n> crawled_link_hits=<n>
//! #end pages=<n>
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::corpus::{PageId, SeedSet, WebGraph};
use crate::error::{Error, Result};
use crate::frontier::{Frontier, SEED_PRIORITY};
use crate::policy::{DiscoveryContext, PolicyKind, PriorityRule};
use crate::quality::QualityTable;

const TRACE_MAGIC: &str = "#frontier-sim-trace v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimConfig {
    pub policy: PolicyKind,
    /// Pages between checkpoints.
    pub checkpoint_interval: usize,
    /// Maximum number of pages to crawl.
    pub budget: usize,
    /// Recorded in outputs; the crawl loop itself does not draw randomness.
    pub rng_seed: u64,
}

impl SimConfig {
    pub fn new(policy: PolicyKind, checkpoint_interval: usize, budget: usize) -> Self {
        SimConfig {
            policy,
            checkpoint_interval,
            budget,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget < 1 {
            return Err(Error::invalid("budget must be at least 1"));
        }
        if self.checkpoint_interval < 1 || self.checkpoint_interval > self.budget {
            return Err(Error::invalid(format!(
                "checkpoint interval {} must be in [1, budget={}]",
                self.checkpoint_interval, self.budget
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CrawlStats {
    pub frontier_peak: usize,
    /// Out-links pointing at a page already in the frontier.
    pub rediscoveries: usize,
    /// Rediscoveries that changed a priority.
    pub priority_updates: usize,
    /// Out-links pointing at an already crawled page.
    pub crawled_link_hits: usize,
}

/// The ordered record of a crawl. Position `i` of [`order`](Self::order) was
/// crawled at time `t = i + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrawlTrace {
    pub config: SimConfig,
    pub graph_digest: String,
    pub order: Vec<PageId>,
    /// Crawl times at which metrics are measured, ascending.
    pub checkpoints: Vec<usize>,
    pub stats: CrawlStats,
}

impl CrawlTrace {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn policy(&self) -> PolicyKind {
        self.config.policy
    }

    /// Pages crawled up to and including time `t`.
    pub fn crawled_until(&self, t: usize) -> &[PageId] {
        &self.order[..t.min(self.order.len())]
    }

    pub fn write<W: Write>(&self, graph: &WebGraph, out: W) -> Result<()> {
        write_trace_to(self, graph, out).map_err(|e| Error::io("<trace>", e))
    }

    pub fn to_bytes(&self, graph: &WebGraph) -> Vec<u8> {
        let mut buf = Vec::new();
        write_trace_to(self, graph, &mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

/// Hooks into the crawl loop, used by tests and diagnostics.
pub trait CrawlObserver {
    fn on_push(&mut self, _page: PageId, _priority: f64) {}
    fn on_update(&mut self, _page: PageId, _old: f64, _new: f64) {}
    /// `t` is the 1-based crawl time.
    fn on_crawl(&mut self, _page: PageId, _t: usize, _priority: f64) {}
}

impl CrawlObserver for () {}

/// A crawl in progress, advanced one page at a time.
pub struct Crawl<'a> {
    graph: &'a WebGraph,
    quality: &'a QualityTable,
    policy: PolicyKind,
    frontier: Frontier,
    crawled: Vec<bool>,
    discovered: usize,
    order: Vec<PageId>,
    stats: CrawlStats,
}

impl<'a> Crawl<'a> {
    pub fn new(
        graph: &'a WebGraph,
        seeds: &SeedSet,
        quality: &'a QualityTable,
        policy: PolicyKind,
        observer: &mut impl CrawlObserver,
    ) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::invalid("seed set is empty"));
        }
        if quality.len() != graph.num_pages() {
            return Err(Error::invalid(format!(
                "quality table has {} scores for {} pages",
                quality.len(),
                graph.num_pages()
            )));
        }
        let mut frontier = Frontier::new(graph.num_pages());
        for &s in seeds.as_slice() {
            frontier.push(s, SEED_PRIORITY)?;
            observer.on_push(s, SEED_PRIORITY);
        }
        Ok(Crawl {
            graph,
            quality,
            policy,
            discovered: frontier.len(),
            frontier,
            crawled: vec![false; graph.num_pages()],
            order: Vec::new(),
            stats: CrawlStats::default(),
        })
    }

    /// Crawls the next page, or returns `None` when the frontier is empty.
    pub fn step(&mut self, observer: &mut impl CrawlObserver) -> Result<Option<PageId>> {
        let Ok(entry) = self.frontier.pop_entry() else {
            return Ok(None);
        };
        let page = entry.page;
        self.crawled[page.index()] = true;
        self.order.push(page);
        observer.on_crawl(page, self.order.len(), entry.priority);

        let scores = self.quality.scores();
        let ancestor_quality = scores[page.index()];
        for &target in self.graph.outlinks(page) {
            if self.crawled[target.index()] {
                self.stats.crawled_link_hits += 1;
                continue;
            }
            let ctx = DiscoveryContext {
                ancestor: page,
                ancestor_quality,
                target,
                target_quality_oracle: self
                    .policy
                    .uses_oracle()
                    .then(|| scores[target.index()]),
            };
            if let Some(current) = self.frontier.priority(target) {
                self.stats.rediscoveries += 1;
                // seeds keep the sentinel until crawled
                if current == SEED_PRIORITY {
                    continue;
                }
                if let Some(new) = self.policy.rediscovery_update(current, &ctx) {
                    self.frontier.update_priority(target, new)?;
                    self.stats.priority_updates += 1;
                    observer.on_update(target, current, new);
                }
            } else {
                let priority = self.policy.initial_priority(&ctx)?;
                self.frontier.push(target, priority)?;
                self.discovered += 1;
                observer.on_push(target, priority);
            }
        }
        Ok(Some(page))
    }

    pub fn crawled_count(&self) -> usize {
        self.order.len()
    }

    pub fn frontier_len(&self) -> usize {
        self.frontier.len()
    }

    /// Pages ever enqueued (crawled or still waiting).
    pub fn discovered_count(&self) -> usize {
        self.discovered
    }

    pub fn frontier(&self) -> &Frontier {
        &self.frontier
    }

    pub fn order(&self) -> &[PageId] {
        &self.order
    }

    fn finish(mut self, config: SimConfig) -> CrawlTrace {
        self.stats.frontier_peak = self.frontier.peak_len();
        let len = self.order.len();
        let mut checkpoints: Vec<usize> = (1..=len / config.checkpoint_interval)
            .map(|k| k * config.checkpoint_interval)
            .collect();
        if len > 0 && checkpoints.last() != Some(&len) {
            checkpoints.push(len);
        }
        CrawlTrace {
            config,
            graph_digest: self.graph.digest(),
            order: self.order,
            checkpoints,
            stats: self.stats,
        }
    }
}

pub fn run_crawl(
    graph: &WebGraph,
    seeds: &SeedSet,
    quality: &QualityTable,
    config: SimConfig,
) -> Result<CrawlTrace> {
    run_crawl_observed(graph, seeds, quality, config, &mut ())
}

pub fn run_crawl_observed(
    graph: &WebGraph,
    seeds: &SeedSet,
    quality: &QualityTable,
    config: SimConfig,
    observer: &mut impl CrawlObserver,
) -> Result<CrawlTrace> {
    config.validate()?;
    let mut crawl = Crawl::new(graph, seeds, quality, config.policy, observer)?;
    while crawl.crawled_count() < config.budget {
        if crawl.step(observer)?.is_none() {
            break;
        }
    }
    Ok(crawl.finish(config))
}

fn write_trace_to<W: Write>(trace: &CrawlTrace, graph: &WebGraph, out: W) -> std::io::Result<()> {
    let mut out = BufWriter::new(out);
    let c = &trace.config;
    writeln!(
        out,
        "{TRACE_MAGIC} digest={} policy={} T={} budget={} rng_seed={}",
        trace.graph_digest, c.policy, c.checkpoint_interval, c.budget, c.rng_seed
    )?;
    for &p in &trace.order {
        writeln!(out, "{}", graph.key(p))?;
    }
    write!(out, "#checkpoints")?;
    for t in &trace.checkpoints {
        write!(out, " {t}")?;
    }
    writeln!(out)?;
    let s = &trace.stats;
    writeln!(
        out,
        "#stats frontier_peak={} rediscoveries={} priority_updates={} crawled_link_hits={}",
        s.frontier_peak, s.rediscoveries, s.priority_updates, s.crawled_link_hits
    )?;
    writeln!(out, "#end pages={}", trace.order.len())?;
    out.flush()
}

pub fn write_trace(trace: &CrawlTrace, graph: &WebGraph, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace_to(trace, graph, file).map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path, graph: &WebGraph) -> Result<CrawlTrace> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    parse_trace(&text, &path.display().to_string(), graph)
}

/// `key=value` fields of a metadata line, in order.
fn fields(rest: &str) -> impl Iterator<Item = (&str, &str)> {
    rest.split_whitespace()
        .filter_map(|f| f.split_once('='))
}

fn field<T: std::str::FromStr>(rest: &str, name: &str) -> Option<T> {
    fields(rest).find(|(k, _)| *k == name).and_then(|(_, v)| v.parse().ok())
}

pub fn parse_trace(text: &str, source: &str, graph: &WebGraph) -> Result<CrawlTrace> {
    let malformed = |offset: usize, message: String| Error::Malformed {
        source_name: source.to_string(),
        offset: offset as u64,
        message,
    };
    let mut offset = 0;
    let mut lines = text.split_inclusive('\n').map(|raw| {
        let start = offset;
        offset += raw.len();
        (start, raw)
    });
    let complete = |raw: &str| raw.ends_with('\n');

    let (_, header) = lines
        .next()
        .filter(|(_, raw)| complete(raw))
        .ok_or_else(|| malformed(0, "missing trace header".into()))?;
    let header = header.trim_end();
    let rest = header
        .strip_prefix(TRACE_MAGIC)
        .ok_or_else(|| malformed(0, "not a frontier-sim trace".into()))?;
    let bad_header = |what: &str| malformed(0, format!("bad header field {what}"));
    let config = SimConfig {
        policy: fields(rest)
            .find(|(k, _)| *k == "policy")
            .ok_or_else(|| bad_header("policy"))?
            .1
            .parse()?,
        checkpoint_interval: field(rest, "T").ok_or_else(|| bad_header("T"))?,
        budget: field(rest, "budget").ok_or_else(|| bad_header("budget"))?,
        rng_seed: field(rest, "rng_seed").ok_or_else(|| bad_header("rng_seed"))?,
    };
    let graph_digest: String = field(rest, "digest").ok_or_else(|| bad_header("digest"))?;
    if graph_digest != graph.digest() {
        return Err(malformed(
            0,
            format!(
                "trace digest {graph_digest} does not match graph digest {}",
                graph.digest()
            ),
        ));
    }

    let mut order = Vec::new();
    let mut seen = vec![false; graph.num_pages()];
    let mut checkpoints = None;
    let mut stats = None;
    let mut ended = false;
    for (start, raw) in lines.by_ref() {
        if !complete(raw) {
            return Err(malformed(start, "truncated line".into()));
        }
        let line = raw.trim_end();
        if let Some(rest) = line.strip_prefix("#checkpoints") {
            let ts: std::result::Result<Vec<usize>, _> =
                rest.split_whitespace().map(str::parse).collect();
            checkpoints = Some(ts.map_err(|_| malformed(start, "bad checkpoint list".into()))?);
        } else if let Some(rest) = line.strip_prefix("#stats") {
            let get = |name: &str| {
                field::<usize>(rest, name).ok_or_else(|| malformed(start, format!("bad stats field {name}")))
            };
            stats = Some(CrawlStats {
                frontier_peak: get("frontier_peak")?,
                rediscoveries: get("rediscoveries")?,
                priority_updates: get("priority_updates")?,
                crawled_link_hits: get("crawled_link_hits")?,
            });
        } else if let Some(rest) = line.strip_prefix("#end") {
            let n: usize = field(rest, "pages").ok_or_else(|| malformed(start, "bad end marker".into()))?;
            if n != order.len() {
                return Err(malformed(
                    start,
                    format!("end marker says {n} pages, found {}", order.len()),
                ));
            }
            ended = true;
            break;
        } else if line.starts_with('#') {
            return Err(malformed(start, format!("unknown metadata line {line:?}")));
        } else {
            if checkpoints.is_some() || stats.is_some() {
                return Err(malformed(start, "page line after metadata block".into()));
            }
            let page = graph
                .id(line)
                .ok_or_else(|| malformed(start, format!("unknown page {line:?}")))?;
            if std::mem::replace(&mut seen[page.index()], true) {
                return Err(malformed(start, format!("page {line:?} crawled twice")));
            }
            order.push(page);
        }
    }
    if !ended {
        return Err(malformed(offset, "truncated trace: missing end marker".into()));
    }
    if let Some((start, _)) = lines.next() {
        return Err(malformed(start, "trailing data after end marker".into()));
    }
    let checkpoints = checkpoints.ok_or_else(|| malformed(offset, "missing checkpoints".into()))?;
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) || checkpoints.last().is_some_and(|&t| t > order.len()) {
        return Err(malformed(offset, "checkpoints must be increasing and within the trace".into()));
    }
    Ok(CrawlTrace {
        config,
        graph_digest,
        order,
        checkpoints,
        stats: stats.ok_or_else(|| malformed(offset, "missing stats".into()))?,
    })
}
