//! Retrieval effectiveness at crawl checkpoints: BM25 over the crawled pages,
//! an optional rerank stage, and nDCG@k against qrels.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use crate::corpus::{tokenize, DocumentStore, PageId, Qrels, Query, QuerySet, TermId, WebGraph};
use crate::metrics::{MetricError, MetricResult};
use crate::simulator::CrawlTrace;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
/// Depth of the first-stage BM25 ranking handed to the reranker.
pub const FIRST_STAGE_DEPTH: usize = 100;
pub const NDCG_CUTOFF: usize = 10;

/// Scores are compared at this many decimal places so that summation-order
/// jitter cannot reorder equal scores.
const TIE_SCALE: f64 = 1e9;

#[derive(Clone, Debug, PartialEq)]
pub struct InvertedIndex {
    /// Postings sorted by page id.
    postings: HashMap<TermId, Vec<(PageId, u32)>>,
    doc_lengths: BTreeMap<PageId, u32>,
    avg_doc_length: f64,
    /// Crawled pages that had no text.
    missing_text: usize,
}

impl InvertedIndex {
    /// Indexes the crawled pages that have text.
    pub fn build(docs: &DocumentStore, crawled: &[PageId]) -> Self {
        let mut pages = crawled.to_vec();
        pages.sort_unstable();
        pages.dedup();
        let mut postings: HashMap<TermId, Vec<(PageId, u32)>> = HashMap::new();
        let mut doc_lengths = BTreeMap::new();
        let mut missing_text = 0;
        let mut scratch: Vec<TermId> = Vec::new();
        for page in pages {
            let Some(tokens) = docs.tokens(page) else {
                missing_text += 1;
                continue;
            };
            doc_lengths.insert(page, tokens.len() as u32);
            scratch.clear();
            scratch.extend_from_slice(tokens);
            scratch.sort_unstable();
            for run in scratch.chunk_by(|a, b| a == b) {
                postings.entry(run[0]).or_default().push((page, run.len() as u32));
            }
        }
        let total: u64 = doc_lengths.values().map(|&l| u64::from(l)).sum();
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            total as f64 / doc_lengths.len() as f64
        };
        InvertedIndex {
            postings,
            doc_lengths,
            avg_doc_length,
            missing_text,
        }
    }

    pub fn num_docs(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, page: PageId) -> Option<u32> {
        self.doc_lengths.get(&page).copied()
    }

    pub fn postings(&self, term: TermId) -> &[(PageId, u32)] {
        self.postings.get(&term).map_or(&[], Vec::as_slice)
    }

    pub fn num_terms(&self) -> usize {
        self.postings.len()
    }

    pub fn missing_text(&self) -> usize {
        self.missing_text
    }
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`
pub fn bm25_idf(num_docs: usize, df: usize) -> f64 {
    let (n, df) = (num_docs as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Term-frequency component of BM25 for one (term, document) pair.
pub fn bm25_tf(tf: u32, doc_length: u32, avg_doc_length: f64) -> f64 {
    let tf = f64::from(tf);
    let norm = 1.0 - BM25_B + BM25_B * f64::from(doc_length) / avg_doc_length;
    tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * norm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ranking {
    pub query_id: String,
    /// Sorted by score descending, ties by page id ascending.
    pub hits: Vec<(PageId, f64)>,
    pub depth: usize,
}

fn tie_key(score: f64) -> i64 {
    (score * TIE_SCALE).round() as i64
}

/// Sorts hits by rounded score descending, then page id, and keeps `depth`.
pub fn sort_hits(hits: &mut Vec<(PageId, f64)>, depth: usize) {
    hits.sort_by(|a, b| tie_key(b.1).cmp(&tie_key(a.1)).then(a.0.cmp(&b.0)));
    hits.truncate(depth);
}

/// Distinct query terms that occur in the document vocabulary, in query order.
fn query_terms(docs: &DocumentStore, text: &str) -> Vec<TermId> {
    let mut terms: Vec<TermId> = Vec::new();
    for t in tokenize(text) {
        if let Some(id) = docs.term_id(&t) {
            if !terms.contains(&id) {
                terms.push(id);
            }
        }
    }
    terms
}

/// Top-`k` BM25 ranking. Each distinct query term contributes once.
pub fn bm25_search(index: &InvertedIndex, docs: &DocumentStore, query: &Query, k: usize) -> Ranking {
    let n = index.num_docs();
    let mut scores: HashMap<PageId, f64> = HashMap::new();
    for term in query_terms(docs, &query.text) {
        let postings = index.postings(term);
        if postings.is_empty() {
            continue;
        }
        let idf = bm25_idf(n, postings.len());
        for &(page, tf) in postings {
            let dl = index.doc_lengths[&page];
            *scores.entry(page).or_insert(0.0) += idf * bm25_tf(tf, dl, index.avg_doc_length);
        }
    }
    let mut hits: Vec<(PageId, f64)> = scores.into_iter().collect();
    sort_hits(&mut hits, k);
    Ranking {
        query_id: query.id.clone(),
        hits,
        depth: k,
    }
}

/// Second pipeline stage. A cross-encoder would plug in here.
pub trait Reranker: Send + Sync {
    fn rerank(&self, query: &Query, ranking: Ranking) -> Ranking;
}

/// Keeps the first-stage order.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityReranker;

impl Reranker for IdentityReranker {
    fn rerank(&self, _query: &Query, ranking: Ranking) -> Ranking {
        ranking
    }
}

/// DCG@k (gain `2^grade - 1`, discount `1/log2(rank + 1)`) divided by the
/// ideal DCG@k over the query's judged pages in the whole corpus.
pub fn ndcg_at_k(ranking: &Ranking, qrels: &Qrels, k: usize) -> MetricResult<f64> {
    let judgments = qrels
        .judgments(&ranking.query_id)
        .ok_or_else(|| MetricError::UnknownQuery(ranking.query_id.clone()))?;
    let gain = |grade: u32| 2f64.powi(grade as i32) - 1.0;
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = ranking
        .hits
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, (page, _))| gain(judgments.get(page).copied().unwrap_or(0)) * discount(i + 1))
        .sum();
    let mut grades: Vec<u32> = judgments.values().copied().filter(|&g| g > 0).collect();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    let ideal: f64 = grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) * discount(i + 1))
        .sum();
    Ok(if ideal > 0.0 { dcg / ideal } else { 0.0 })
}

/// BM25 first stage, rerank, nDCG at the cutoff.
pub struct RetrievalPipeline<'a> {
    pub docs: &'a DocumentStore,
    pub queries: &'a QuerySet,
    pub reranker: &'a dyn Reranker,
    pub first_stage_depth: usize,
    pub cutoff: usize,
}

impl<'a> RetrievalPipeline<'a> {
    pub fn new(docs: &'a DocumentStore, queries: &'a QuerySet) -> Self {
        RetrievalPipeline {
            docs,
            queries,
            reranker: &IdentityReranker,
            first_stage_depth: FIRST_STAGE_DEPTH,
            cutoff: NDCG_CUTOFF,
        }
    }

    /// Rankings for every query that has qrels.
    pub fn rankings(&self, index: &InvertedIndex, qrels: &Qrels) -> Vec<Ranking> {
        self.queries
            .iter()
            .filter(|q| qrels.contains_query(&q.id))
            .map(|q| {
                let first = bm25_search(index, self.docs, q, self.first_stage_depth);
                self.reranker.rerank(q, first)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEval {
    pub t: usize,
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
    /// Crawled pages without text, left out of the index.
    pub missing_text: usize,
}

/// Rebuilds the index over the pages crawled by time `t` and scores every
/// judged query.
pub fn evaluate_checkpoint(
    trace: &CrawlTrace,
    t: usize,
    pipeline: &RetrievalPipeline<'_>,
    qrels: &Qrels,
) -> MetricResult<CheckpointEval> {
    if t == 0 {
        return Err(MetricError::ZeroTime);
    }
    let index = InvertedIndex::build(pipeline.docs, trace.crawled_until(t));
    let mut per_query = BTreeMap::new();
    for ranking in pipeline.rankings(&index, qrels) {
        let value = ndcg_at_k(&ranking, qrels, pipeline.cutoff)?;
        per_query.insert(ranking.query_id, value);
    }
    let mean = if per_query.is_empty() {
        0.0
    } else {
        per_query.values().sum::<f64>() / per_query.len() as f64
    };
    Ok(CheckpointEval {
        t,
        per_query,
        mean,
        missing_text: index.missing_text(),
    })
}

/// TREC run format: `qid Q0 docid rank score tag`.
pub fn write_run<W: Write>(
    rankings: &[Ranking],
    graph: &WebGraph,
    tag: &str,
    mut out: W,
) -> std::io::Result<()> {
    for r in rankings {
        for (i, (page, score)) in r.hits.iter().enumerate() {
            writeln!(out, "{} Q0 {} {} {:.6} {}", r.query_id, graph.key(*page), i + 1, score, tag)?;
        }
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store(texts: &[&str]) -> DocumentStore {
        let mut d = DocumentStore::new(texts.len());
        for (i, t) in texts.iter().enumerate() {
            d.insert(PageId::new(i as u32), t);
        }
        d
    }

    fn all(n: usize) -> Vec<PageId> {
        (0..n as u32).map(PageId::new).collect()
    }

    fn query(id: &str, text: &str) -> Query {
        Query {
            id: id.into(),
            text: text.into(),
        }
    }

    #[test]
    fn build_basics() {
        let d = store(&["alpha beta", "gamma delta"]);
        let idx = InvertedIndex::build(&d, &all(2));
        for t in ["alpha", "beta", "gamma", "delta"] {
            assert_eq!(idx.postings(d.term_id(t).unwrap()).len(), 1);
        }
        let d = store(&["a b c d", "a b c d e f"]);
        let idx = InvertedIndex::build(&d, &all(2));
        assert_eq!(idx.avg_doc_length(), 5.0);
        assert_eq!(idx, InvertedIndex::build(&d, &[PageId::new(1), PageId::new(0)]));
    }

    #[test]
    fn missing_text_and_empty_index() {
        let mut d = DocumentStore::new(3);
        d.insert(PageId::new(0), "solo");
        let idx = InvertedIndex::build(&d, &all(3));
        assert_eq!(idx.num_docs(), 1);
        assert_eq!(idx.missing_text(), 2);
        let empty = InvertedIndex::build(&d, &[]);
        assert_eq!(empty.num_docs(), 0);
        assert!(bm25_search(&empty, &d, &query("q", "solo"), 10).hits.is_empty());
    }

    #[test]
    fn search_simple_cases() {
        let d = store(&["red fox", "blue whale"]);
        let idx = InvertedIndex::build(&d, &all(2));
        assert!(bm25_search(&idx, &d, &query("q", "zebra"), 10).hits.is_empty());
        let r = bm25_search(&idx, &d, &query("q", "whale"), 10);
        assert_eq!(r.hits.len(), 1);
        assert_eq!(r.hits[0].0, PageId::new(1));
        assert!(r.hits[0].1 > 0.0);
    }

    /// Scores every document from scratch with the BM25 formula.
    fn brute_force(texts: &[String], q: &str, k: usize) -> Vec<(PageId, f64)> {
        let docs: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
        let n = docs.len() as f64;
        let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
        let mut terms = tokenize(q);
        terms.dedup();
        let mut uniq: Vec<String> = Vec::new();
        for t in terms {
            if !uniq.contains(&t) {
                uniq.push(t);
            }
        }
        let mut hits = Vec::new();
        for (i, doc) in docs.iter().enumerate() {
            let mut score = 0.0;
            let mut matched = false;
            for term in &uniq {
                let tf = doc.iter().filter(|w| *w == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                matched = true;
                let df = docs.iter().filter(|d| d.contains(term)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let dl = doc.len() as f64;
                score += idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * dl / avgdl));
            }
            if matched {
                hits.push((PageId::new(i as u32), score));
            }
        }
        sort_hits(&mut hits, k);
        hits
    }

    #[test]
    fn top10_matches_exhaustive_scorer() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let words: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
        let texts: Vec<String> = (0..50)
            .map(|_| {
                let len = rng.random_range(3..25);
                (0..len)
                    .map(|_| words[rng.random_range(0..words.len())].as_str())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let d = store(&refs);
        let idx = InvertedIndex::build(&d, &all(50));
        for q in ["w1", "w2 w3", "w4 w5 w4 w6", "w7 zzz", "w0 w29 w15 w8"] {
            let got = bm25_search(&idx, &d, &query("q", q), 10);
            let want = brute_force(&texts, q, 10);
            assert_eq!(got.hits.len(), want.len());
            for (g, w) in got.hits.iter().zip(&want) {
                assert_eq!(g.0, w.0, "query {q}");
                assert!((g.1 - w.1).abs() < 1e-9 * w.1.abs());
            }
        }
    }

    fn qrels_for(num_pages: usize, triples: &[(&str, u32, u32)]) -> Qrels {
        Qrels::from_judgments(
            num_pages,
            triples
                .iter()
                .map(|&(q, p, g)| (q.to_string(), PageId::new(p), g)),
        )
    }

    fn ranking(qid: &str, pages: &[u32]) -> Ranking {
        Ranking {
            query_id: qid.into(),
            hits: pages
                .iter()
                .enumerate()
                .map(|(i, &p)| (PageId::new(p), 10.0 - i as f64))
                .collect(),
            depth: 10,
        }
    }

    #[test]
    fn ndcg_examples() {
        let q = qrels_for(10, &[("q", 3, 1)]);
        assert_eq!(ndcg_at_k(&ranking("q", &[3, 1, 2]), &q, 10).unwrap(), 1.0);
        let v = ndcg_at_k(&ranking("q", &[1, 3, 2]), &q, 10).unwrap();
        assert!((v - 0.630_929_753_571_457_5).abs() < 1e-12);
        assert_eq!(ndcg_at_k(&ranking("q", &[1, 2]), &q, 10).unwrap(), 0.0);
        assert_eq!(ndcg_at_k(&ranking("q", &[1, 2, 3]), &q, 2).unwrap(), 0.0);
        assert!(ndcg_at_k(&ranking("other", &[1]), &q, 10).is_err());

        // graded: ideal is [2, 1] -> 3 + 1/log2(3)
        let g = qrels_for(10, &[("q", 1, 1), ("q", 2, 2)]);
        let v = ndcg_at_k(&ranking("q", &[1, 2]), &g, 10).unwrap();
        let want = (1.0 + 3.0 / 3f64.log2()) / (3.0 + 1.0 / 3f64.log2());
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn ties_break_by_page_id() {
        let d = store(&["x y", "x y", "x y"]);
        let idx = InvertedIndex::build(&d, &[PageId::new(2), PageId::new(0), PageId::new(1)]);
        let r = bm25_search(&idx, &d, &query("q", "x"), 2);
        assert_eq!(r.hits.iter().map(|h| h.0.get()).collect::<Vec<_>>(), [0, 1]);
    }

    #[test]
    fn unrelated_document_keeps_rank_order() {
        // lengths 3, 2, 4 and the added doc has length 3, so avgdl stays put;
        // for a single-term query the IDF change then scales all scores alike
        let texts = ["cat cat dog", "cat bird", "dog dog fish cat", "fish eel owl"];
        let d = store(&texts);
        let q = query("q", "cat");
        let before = bm25_search(&InvertedIndex::build(&d, &all(3)), &d, &q, 10);
        let after = bm25_search(&InvertedIndex::build(&d, &all(4)), &d, &q, 10);
        let ids = |r: &Ranking| r.hits.iter().map(|h| h.0).collect::<Vec<_>>();
        assert_eq!(ids(&before), ids(&after));
        assert_eq!(ids(&before).len(), 3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn insertion_order_does_not_matter(
                lens in prop::collection::vec(1usize..12, 2..30),
                salt in 0u64..1000,
                perm_seed in 0u64..1000,
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(salt);
                let texts: Vec<String> = lens.iter().map(|&l| {
                    (0..l).map(|_| format!("t{}", rng.random_range(0..8))).collect::<Vec<_>>().join(" ")
                }).collect();
                let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
                let d = store(&refs);
                let mut pages = all(texts.len());
                let a = InvertedIndex::build(&d, &pages);
                let mut prng = ChaCha8Rng::seed_from_u64(perm_seed);
                for i in (1..pages.len()).rev() {
                    pages.swap(i, prng.random_range(0..=i));
                }
                let b = InvertedIndex::build(&d, &pages);
                let q = query("q", "t1 t3 t5");
                prop_assert_eq!(bm25_search(&a, &d, &q, 10), bm25_search(&b, &d, &q, 10));
            }

            #[test]
            fn ndcg_is_a_unit_fraction(
                pages in prop::collection::vec(0u32..30, 0..15),
                grades in prop::collection::vec((0u32..30, 0u32..4), 1..20),
            ) {
                let mut triples: Vec<(&str, u32, u32)> = grades.iter().map(|&(p, g)| ("q", p, g)).collect();
                triples.push(("q", 0, 1));
                let qrels = qrels_for(30, &triples);
                let mut uniq = pages.clone();
                uniq.sort_unstable();
                uniq.dedup();
                let v = ndcg_at_k(&ranking("q", &uniq), &qrels, 10).unwrap();
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
        }
    }
}
