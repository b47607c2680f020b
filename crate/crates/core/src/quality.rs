//! Per-page quality scores, the stand-in for a neural quality estimator.
//!
//! Scores come precomputed from a `docid<TAB>score` file, or from
//! [`synthetic_score`] for generated corpora. Downstream code only compares
//! scores, so their range and calibration do not matter.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{open, PageId, WebGraph};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct QualityTable {
    scores: Vec<f64>,
    default_score: f64,
}

impl QualityTable {
    pub fn from_scores(scores: Vec<f64>, default_score: f64) -> Result<Self> {
        if !default_score.is_finite() {
            return Err(Error::invalid(format!("default score {default_score} is not finite")));
        }
        if let Some((i, s)) = scores.iter().enumerate().find(|(_, s)| !s.is_finite()) {
            return Err(Error::invalid(format!("score {s} for page {i} is not finite")));
        }
        Ok(QualityTable {
            scores,
            default_score,
        })
    }

    /// Every page gets the same score.
    pub fn constant(num_pages: usize, score: f64) -> Result<Self> {
        Self::from_scores(vec![score; num_pages], score)
    }

    pub fn score(&self, page: PageId) -> Result<f64> {
        self.scores
            .get(page.index())
            .copied()
            .ok_or_else(|| Error::invalid(format!("page {page} has no quality slot")))
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn default_score(&self) -> f64 {
        self.default_score
    }

    /// Applies `f` to every score (and the default).
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_scores(self.scores.iter().map(|&s| f(s)).collect(), f(self.default_score))
    }

    pub fn write<W: Write>(&self, graph: &WebGraph, mut out: W) -> std::io::Result<()> {
        for p in graph.pages() {
            writeln!(out, "{}\t{}", graph.key(p), self.scores[p.index()])?;
        }
        out.flush()
    }
}

/// Parses a quality file. Pages missing from the file get `default_score`;
/// unknown keys are skipped with a warning; a repeated key keeps the last
/// value.
pub fn parse_quality_table<R: BufRead>(
    reader: R,
    source: &str,
    graph: &WebGraph,
    default_score: f64,
) -> Result<QualityTable> {
    let mut scores = vec![default_score; graph.num_pages()];
    let mut seen: HashMap<PageId, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::parse(source, line_no, e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(source, line_no, "expected `docid<TAB>score`"))?;
        let score: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::parse(source, line_no, format!("bad score {value:?}")))?;
        if !score.is_finite() {
            return Err(Error::parse(source, line_no, format!("non-finite score {value:?}")));
        }
        let Some(page) = graph.id(key) else {
            warn!("{source}:{line_no}: unknown page {key:?}, skipped");
            continue;
        };
        if let Some(prev) = seen.insert(page, line_no) {
            warn!("{source}:{line_no}: {key:?} already scored on line {prev}; last value wins");
        }
        scores[page.index()] = score;
    }
    QualityTable::from_scores(scores, default_score)
}

pub fn load_quality_table(path: &Path, graph: &WebGraph, default_score: f64) -> Result<QualityTable> {
    parse_quality_table(open(path)?, &path.display().to_string(), graph, default_score)
}

fn mix(seed: u64, page: u32) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed ^ (u64::from(page).wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `planted_quality` plus Gaussian noise that depends only on
/// `(rng_seed, page)`.
pub fn synthetic_score(page: PageId, planted_quality: f64, noise_sigma: f64, rng_seed: u64) -> Result<f64> {
    if !noise_sigma.is_finite() || noise_sigma < 0.0 {
        return Err(Error::invalid(format!("noise sigma {noise_sigma} must be >= 0")));
    }
    if noise_sigma == 0.0 {
        return Ok(planted_quality);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(rng_seed, page.get()));
    let z: f64 = StandardNormal.sample(&mut rng);
    Ok(planted_quality + noise_sigma * z)
}
