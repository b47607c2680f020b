//! Synthetic web graphs where linked pages tend to share quality.
//!
//! Pages belong to a high- or low-quality population. Each out-link stays
//! inside the source's population with probability `assortativity` and
//! otherwise points at a uniformly random page, so the correlation between
//! the population indicators of an edge's endpoints is `assortativity` in
//! expectation.
//!
//! Two query sets are planted:
//!
//! * `nl`: relevant pages drawn only from the high-quality population
//!   (relevance tracks quality closely);
//! * `kw`: the same number of relevant pages, only `weak_high_share` of them
//!   from the high-quality population (relevance tracks quality weakly).
//!
//! Generation is deterministic in `rng_seed`; each phase draws from its own
//! ChaCha stream so toggling document text does not perturb the graph.

use std::collections::VecDeque;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{DocumentStore, PageId, Qrels, Query, QuerySet, SeedSet, WebGraph};
use crate::error::{Error, Result};
use crate::quality::QualityTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DegreeDistribution {
    #[default]
    Poisson,
    PowerLaw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_pages: usize,
    pub avg_out_degree: f64,
    pub degree_distribution: DegreeDistribution,
    /// Tail exponent of the power-law out-degree density.
    pub power_law_exponent: f64,
    /// Probability an out-link stays within the source's quality population.
    pub assortativity: f64,
    pub high_quality_fraction: f64,
    pub high_quality_mean: f64,
    pub low_quality_mean: f64,
    pub quality_jitter: f64,
    /// Fraction of high-quality pages marked relevant in each query set.
    pub relevant_fraction: f64,
    /// Share of the `kw` set's relevant pages taken from the high population.
    pub weak_high_share: f64,
    pub queries_per_set: usize,
    pub num_seeds: usize,
    pub emit_documents: bool,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_pages: 100_000,
            avg_out_degree: 10.0,
            degree_distribution: DegreeDistribution::Poisson,
            power_law_exponent: 2.5,
            assortativity: 0.8,
            high_quality_fraction: 0.5,
            high_quality_mean: 0.8,
            low_quality_mean: 0.2,
            quality_jitter: 0.05,
            relevant_fraction: 0.1,
            weak_high_share: 0.6,
            queries_per_set: 200,
            num_seeds: 100,
            emit_documents: true,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} must be in [0, 1]")))
            }
        };
        unit("assortativity", self.assortativity)?;
        unit("high_quality_fraction", self.high_quality_fraction)?;
        unit("relevant_fraction", self.relevant_fraction)?;
        unit("weak_high_share", self.weak_high_share)?;
        if self.num_pages < 2 {
            return Err(Error::invalid("num_pages must be at least 2"));
        }
        if !self.avg_out_degree.is_finite() || self.avg_out_degree < 0.0 {
            return Err(Error::invalid("avg_out_degree must be a finite value >= 0"));
        }
        if self.degree_distribution == DegreeDistribution::PowerLaw && (self.power_law_exponent.is_nan() || self.power_law_exponent <= 2.0) {
            return Err(Error::invalid("power_law_exponent must exceed 2 for a finite mean"));
        }
        if self.quality_jitter.is_nan() || self.quality_jitter < 0.0 {
            return Err(Error::invalid("quality_jitter must be >= 0"));
        }
        if self.num_seeds == 0 || self.num_seeds > self.num_pages {
            return Err(Error::invalid(format!(
                "num_seeds = {} must be in [1, num_pages]",
                self.num_seeds
            )));
        }
        if self.queries_per_set == 0 {
            return Err(Error::invalid("queries_per_set must be at least 1"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("synth config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Names of the two planted query sets.
pub const STRONG_SET: &str = "nl";
pub const WEAK_SET: &str = "kw";

#[derive(Clone, Debug)]
pub struct PlantedQuerySet {
    pub name: String,
    pub queries: QuerySet,
    pub qrels: Qrels,
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub graph: WebGraph,
    pub quality: QualityTable,
    pub seeds: SeedSet,
    /// Population membership per page.
    pub high_quality: Vec<bool>,
    /// Relevance tracks quality closely.
    pub strong: PlantedQuerySet,
    /// Relevance tracks quality weakly.
    pub weak: PlantedQuerySet,
    /// Page text in id order, when requested.
    pub documents: Option<Vec<String>>,
}

fn stream(seed: u64, phase: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(phase);
    rng
}

fn page_key(i: usize) -> String {
    format!("p{i}")
}

struct Sizes {
    relevant: usize,
    weak_high: usize,
    weak_low: usize,
}

fn planted_sizes(config: &SynthConfig, n_high: usize, n_low: usize) -> Result<Sizes> {
    let relevant = (config.relevant_fraction * n_high as f64).round() as usize;
    let weak_high = (config.weak_high_share * relevant as f64).round() as usize;
    let weak_low = relevant - weak_high;
    if relevant < config.queries_per_set {
        return Err(Error::invalid(format!(
            "{relevant} relevant pages cannot cover {} queries",
            config.queries_per_set
        )));
    }
    if weak_high > n_high || weak_low > n_low {
        return Err(Error::invalid(format!(
            "weak query set needs {weak_high} high and {weak_low} low quality pages, \
             populations are {n_high} and {n_low}"
        )));
    }
    Ok(Sizes {
        relevant,
        weak_high,
        weak_low,
    })
}

fn out_degree(config: &SynthConfig, poisson: Option<&Poisson<f64>>, rng: &mut ChaCha8Rng) -> usize {
    let max = config.num_pages - 1;
    let d = match config.degree_distribution {
        DegreeDistribution::Poisson => poisson.map_or(0.0, |p| p.sample(rng)),
        DegreeDistribution::PowerLaw => {
            // Pareto with shape k = exponent - 1, scaled to the requested mean.
            let k = config.power_law_exponent - 1.0;
            let scale = config.avg_out_degree * (k - 1.0) / k;
            let u: f64 = 1.0 - rng.random::<f64>();
            (scale * u.powf(-1.0 / k)).round()
        }
    };
    (d as usize).min(max)
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let n = config.num_pages;

    let mut rng = stream(config.rng_seed, 1);
    let mut high_quality = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for _ in 0..n {
        let high = rng.random_bool(config.high_quality_fraction);
        let mean = if high {
            config.high_quality_mean
        } else {
            config.low_quality_mean
        };
        let z: f64 = StandardNormal.sample(&mut rng);
        high_quality.push(high);
        scores.push((mean + config.quality_jitter * z).clamp(0.0, 1.0));
    }
    let high_pages: Vec<u32> = (0..n as u32).filter(|&i| high_quality[i as usize]).collect();
    let low_pages: Vec<u32> = (0..n as u32).filter(|&i| !high_quality[i as usize]).collect();
    let sizes = planted_sizes(config, high_pages.len(), low_pages.len())?;

    let mut rng = stream(config.rng_seed, 2);
    let poisson = (config.avg_out_degree > 0.0)
        .then(|| Poisson::new(config.avg_out_degree).expect("positive rate"));
    let mut adjacency: Vec<Vec<PageId>> = Vec::with_capacity(n);
    for (src, &high) in high_quality.iter().enumerate() {
        let degree = out_degree(config, poisson.as_ref(), &mut rng);
        let own = if high { &high_pages } else { &low_pages };
        let mut links: Vec<PageId> = Vec::with_capacity(degree);
        for _ in 0..degree {
            for _attempt in 0..16 {
                let dst = if own.len() > 1 && rng.random_bool(config.assortativity) {
                    own[rng.random_range(0..own.len())]
                } else {
                    rng.random_range(0..n as u32)
                };
                let dst = PageId::new(dst);
                if dst.index() != src && !links.contains(&dst) {
                    links.push(dst);
                    break;
                }
            }
        }
        adjacency.push(links);
    }
    let graph = WebGraph::from_adjacency((0..n).map(page_key).collect(), adjacency)?;
    let quality = QualityTable::from_scores(scores, 0.0)?;

    let mut rng = stream(config.rng_seed, 3);
    let seeds = sample(&mut rng, n, config.num_seeds)
        .into_iter()
        .map(|i| PageId::new(i as u32))
        .collect();
    let seeds = SeedSet::new(seeds, &graph)?;

    let mut rng = stream(config.rng_seed, 4);
    let pick = |rng: &mut ChaCha8Rng, pool: &[u32], k: usize| -> Vec<PageId> {
        sample(rng, pool.len(), k)
            .into_iter()
            .map(|i| PageId::new(pool[i]))
            .collect()
    };
    let strong_pages = pick(&mut rng, &high_pages, sizes.relevant);
    let mut weak_pages = pick(&mut rng, &high_pages, sizes.weak_high);
    weak_pages.extend(pick(&mut rng, &low_pages, sizes.weak_low));

    let strong_assign = assign_queries(&strong_pages, config.queries_per_set);
    let weak_assign = assign_queries(&weak_pages, config.queries_per_set);
    let strong_qrels = planted_qrels(n, STRONG_SET, &strong_assign);
    let weak_qrels = planted_qrels(n, WEAK_SET, &weak_assign);

    let strong_queries = QuerySet::new(
        (0..config.queries_per_set)
            .map(|q| Query {
                id: query_id(STRONG_SET, q),
                text: format!(
                    "how does {} relate to {} and why is {} important",
                    topic_term(STRONG_SET, q, 0),
                    topic_term(STRONG_SET, q, 1),
                    topic_term(STRONG_SET, q, 2)
                ),
            })
            .collect(),
    )?;
    let weak_queries = QuerySet::new(
        (0..config.queries_per_set)
            .map(|q| Query {
                id: query_id(WEAK_SET, q),
                text: format!("{} {}", topic_term(WEAK_SET, q, 0), topic_term(WEAK_SET, q, 1)),
            })
            .collect(),
    )?;

    let documents = config
        .emit_documents
        .then(|| synth_documents(config, &strong_assign, &weak_assign));

    Ok(SynthCorpus {
        config: config.clone(),
        graph,
        quality,
        seeds,
        high_quality,
        strong: PlantedQuerySet {
            name: STRONG_SET.into(),
            queries: strong_queries,
            qrels: strong_qrels,
        },
        weak: PlantedQuerySet {
            name: WEAK_SET.into(),
            queries: weak_queries,
            qrels: weak_qrels,
        },
        documents,
    })
}

fn query_id(set: &str, q: usize) -> String {
    format!("{set}-{q:04}")
}

fn topic_term(set: &str, q: usize, slot: usize) -> String {
    format!("{set}{q}{}", ["a", "b", "c"][slot])
}

/// Page `i` of `pages` goes to query `i mod num_queries`.
fn assign_queries(pages: &[PageId], num_queries: usize) -> Vec<(usize, PageId)> {
    pages
        .iter()
        .enumerate()
        .map(|(i, &p)| (i % num_queries, p))
        .collect()
}

fn planted_qrels(num_pages: usize, set: &str, assignment: &[(usize, PageId)]) -> Qrels {
    Qrels::from_judgments(
        num_pages,
        assignment.iter().map(|&(q, p)| (query_id(set, q), p, 1)),
    )
}

const FILLER_VOCAB: usize = 2000;
const FILLER_LEN: usize = 20;
/// Chance that a page carries one stray topic term from a random query.
const DISTRACTOR_RATE: f64 = 0.1;

fn synth_documents(
    config: &SynthConfig,
    strong: &[(usize, PageId)],
    weak: &[(usize, PageId)],
) -> Vec<String> {
    let mut rng = stream(config.rng_seed, 5);
    let mut texts: Vec<Vec<String>> = (0..config.num_pages)
        .map(|_| {
            (0..FILLER_LEN)
                .map(|_| format!("w{}", rng.random_range(0..FILLER_VOCAB)))
                .collect()
        })
        .collect();
    for &(q, p) in strong {
        for slot in 0..3 {
            texts[p.index()].push(topic_term(STRONG_SET, q, slot));
        }
    }
    for &(q, p) in weak {
        for slot in 0..2 {
            texts[p.index()].push(topic_term(WEAK_SET, q, slot));
        }
    }
    for words in texts.iter_mut() {
        if rng.random_bool(DISTRACTOR_RATE) {
            let set = if rng.random_bool(0.5) { STRONG_SET } else { WEAK_SET };
            let q = rng.random_range(0..config.queries_per_set);
            let slot = rng.random_range(0..2);
            words.push(topic_term(set, q, slot));
        }
    }
    texts.into_iter().map(|w| w.join(" ")).collect()
}

impl SynthCorpus {
    pub fn query_set(&self, name: &str) -> Option<&PlantedQuerySet> {
        [&self.strong, &self.weak].into_iter().find(|s| s.name == name)
    }

    pub fn document_store(&self) -> Option<DocumentStore> {
        self.documents.as_ref().map(|texts| {
            let mut store = DocumentStore::new(self.graph.num_pages());
            for (i, t) in texts.iter().enumerate() {
                store.insert(PageId::new(i as u32), t);
            }
            store
        })
    }

    /// Writes every corpus file in the loader formats plus the config used.
    pub fn write_to_dir(&self, dir: &Path) -> Result<Vec<String>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let mut emit = |name: &str, f: &dyn Fn(&mut BufWriter<File>) -> std::io::Result<()>| -> Result<()> {
            let path = dir.join(name);
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut out = BufWriter::new(file);
            f(&mut out).and_then(|_| out.flush()).map_err(|e| Error::io(&path, e))?;
            written.push(name.to_string());
            Ok(())
        };
        emit("graph.tsv", &|w| self.graph.write_edge_list(w))?;
        emit("seeds.txt", &|w| self.seeds.write(&self.graph, w))?;
        emit("quality.tsv", &|w| self.quality.write(&self.graph, w))?;
        for set in [&self.strong, &self.weak] {
            emit(&format!("qrels.{}.txt", set.name), &|w| set.qrels.write(&self.graph, w))?;
            emit(&format!("queries.{}.tsv", set.name), &|w| set.queries.write(w))?;
        }
        if let Some(texts) = &self.documents {
            emit("docs.tsv", &|w| {
                for (i, t) in texts.iter().enumerate() {
                    writeln!(w, "{}\t{}", page_key(i), t)?;
                }
                Ok(())
            })?;
        }
        emit("synth.toml", &|w| w.write_all(self.config.to_toml().as_bytes()))?;
        Ok(written)
    }
}

fn pearson(pairs: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let (mut n, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs.clone() {
        n += 1.0;
        sx += x;
        sy += y;
    }
    if n < 2.0 {
        return 0.0;
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        cov += (x - mx) * (y - my);
        vx += (x - mx).powi(2);
        vy += (y - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

/// Pearson correlation of the endpoints' population indicators over all edges.
pub fn class_assortativity(graph: &WebGraph, high_quality: &[bool]) -> f64 {
    let ind = |p: PageId| if high_quality[p.index()] { 1.0 } else { 0.0 };
    pearson(graph.edges().map(|(s, d)| (ind(s), ind(d))))
}

/// Pearson correlation of the endpoints' quality scores over all edges.
pub fn quality_correlation(graph: &WebGraph, quality: &QualityTable) -> f64 {
    let s = quality.scores();
    pearson(graph.edges().map(|(a, b)| (s[a.index()], s[b.index()])))
}

/// Fraction of pages reachable from the seeds.
pub fn reachable_fraction(graph: &WebGraph, seeds: &SeedSet) -> f64 {
    reachable(graph, seeds).iter().filter(|r| **r).count() as f64 / graph.num_pages() as f64
}

pub fn reachable(graph: &WebGraph, seeds: &SeedSet) -> Vec<bool> {
    let mut seen = vec![false; graph.num_pages()];
    let mut queue: VecDeque<PageId> = VecDeque::new();
    for &s in seeds.as_slice() {
        seen[s.index()] = true;
        queue.push_back(s);
    }
    while let Some(p) = queue.pop_front() {
        for &q in graph.outlinks(p) {
            if !std::mem::replace(&mut seen[q.index()], true) {
                queue.push_back(q);
            }
        }
    }
    seen
}
