//! The crawl universe: web graph, seeds, queries, relevance judgments and
//! optional document text.
//!
//! Every loader assigns dense [`PageId`]s through the graph, so the graph must
//! be loaded first. All structures are immutable once built.
//!
//! File formats (UTF-8, one record per line, `#` lines are comments):
//!
//! | file      | line format                                   |
//! |-----------|-----------------------------------------------|
//! | edge list | `src<TAB>dst`, or a lone `key` declaring a node |
//! | seeds     | `key`                                         |
//! | qrels     | `qid 0 docid grade` (any whitespace)          |
//! | queries   | `qid<TAB>text`                                |
//! | documents | `docid<TAB>text`                              |

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Dense page index in `[0, num_pages)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PageId(u32);

impl PageId {
    pub const fn new(raw: u32) -> Self {
        PageId(raw)
    }

    pub const fn get(self) -> u32 {
        self.0
    }

    pub const fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn source_name(path: &Path) -> String {
    path.display().to_string()
}

/// Iterates over non-empty, non-comment lines with 1-based line numbers.
fn content_lines<'a, R: BufRead + 'a>(
    reader: R,
    source: &'a str,
) -> impl Iterator<Item = Result<(usize, String)>> + 'a {
    reader
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| match line {
            Err(e) => Some(Err(Error::parse(source, i + 1, e.to_string()))),
            Ok(mut l) => {
                if l.ends_with('\r') {
                    l.pop();
                }
                if l.trim().is_empty() || l.starts_with('#') {
                    None
                } else {
                    Some(Ok((i + 1, l)))
                }
            }
        })
}

/// External keys are opaque but must be non-empty, whitespace-free and must
/// not start with the comment marker.
pub fn validate_key(key: &str) -> std::result::Result<(), String> {
    if key.is_empty() {
        return Err("empty key".into());
    }
    if key.starts_with('#') {
        return Err(format!("key {key:?} starts with '#'"));
    }
    if key.chars().any(char::is_whitespace) {
        return Err(format!("key {key:?} contains whitespace"));
    }
    Ok(())
}

/// Immutable snapshot of pages and their out-links in compressed row form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WebGraph {
    keys: Vec<String>,
    index: HashMap<String, PageId>,
    offsets: Vec<usize>,
    targets: Vec<PageId>,
    dangling_count: usize,
}

impl WebGraph {
    /// Builds a graph from per-page out-link lists. Self-links and repeated
    /// targets are dropped, keeping the first occurrence order.
    pub fn from_adjacency(keys: Vec<String>, adjacency: Vec<Vec<PageId>>) -> Result<Self> {
        if keys.len() != adjacency.len() {
            return Err(Error::invalid(format!(
                "{} keys but {} adjacency lists",
                keys.len(),
                adjacency.len()
            )));
        }
        if keys.len() > u32::MAX as usize {
            return Err(Error::invalid("too many pages"));
        }
        let mut index = HashMap::with_capacity(keys.len());
        for (i, key) in keys.iter().enumerate() {
            validate_key(key).map_err(Error::invalid)?;
            if index.insert(key.clone(), PageId(i as u32)).is_some() {
                return Err(Error::invalid(format!("duplicate external key {key:?}")));
            }
        }
        let n = keys.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::with_capacity(adjacency.iter().map(Vec::len).sum());
        let mut seen = vec![u32::MAX; n];
        offsets.push(0);
        for (src, links) in adjacency.into_iter().enumerate() {
            for dst in links {
                if dst.index() >= n {
                    return Err(Error::invalid(format!(
                        "out-link target {dst} out of range for {n} pages"
                    )));
                }
                if dst.index() == src || seen[dst.index()] == src as u32 {
                    continue;
                }
                seen[dst.index()] = src as u32;
                targets.push(dst);
            }
            offsets.push(targets.len());
        }
        Ok(WebGraph {
            keys,
            index,
            offsets,
            targets,
            dangling_count: 0,
        })
    }

    pub fn num_pages(&self) -> usize {
        self.keys.len()
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    /// Number of pages that appeared only as out-link targets and were
    /// materialized as sinks.
    pub fn dangling_count(&self) -> usize {
        self.dangling_count
    }

    pub fn outlinks(&self, page: PageId) -> &[PageId] {
        let i = page.index();
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn key(&self, page: PageId) -> &str {
        &self.keys[page.index()]
    }

    pub fn id(&self, key: &str) -> Option<PageId> {
        self.index.get(key).copied()
    }

    pub fn contains(&self, page: PageId) -> bool {
        page.index() < self.keys.len()
    }

    pub fn pages(&self) -> impl ExactSizeIterator<Item = PageId> + Clone {
        (0..self.keys.len() as u32).map(PageId)
    }

    pub fn edges(&self) -> impl Iterator<Item = (PageId, PageId)> + Clone + '_ {
        self.pages()
            .flat_map(move |p| self.outlinks(p).iter().map(move |&q| (p, q)))
    }

    /// Short content hash over keys and out-links; identifies the corpus a
    /// trace was produced from.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.keys.len() as u64).to_le_bytes());
        for p in self.pages() {
            hasher.update(self.key(p).as_bytes());
            hasher.update([0u8]);
            let links = self.outlinks(p);
            hasher.update((links.len() as u64).to_le_bytes());
            for q in links {
                hasher.update(q.0.to_le_bytes());
            }
        }
        let bytes = hasher.finalize();
        bytes[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Writes node records for every page (in id order) followed by all
    /// edges, so that reloading reproduces the same ids.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# pages={} edges={}", self.num_pages(), self.num_edges())?;
        for key in &self.keys {
            writeln!(out, "{key}")?;
        }
        for (src, dst) in self.edges() {
            writeln!(out, "{}\t{}", self.key(src), self.key(dst))?;
        }
        out.flush()
    }
}

#[derive(Default)]
struct GraphBuilder {
    keys: Vec<String>,
    index: HashMap<String, PageId>,
    adjacency: Vec<Vec<PageId>>,
    declared: Vec<bool>,
    node_record: Vec<bool>,
}

impl GraphBuilder {
    fn intern(&mut self, key: &str) -> PageId {
        if let Some(&id) = self.index.get(key) {
            return id;
        }
        let id = PageId(self.keys.len() as u32);
        self.keys.push(key.to_string());
        self.index.insert(key.to_string(), id);
        self.adjacency.push(Vec::new());
        self.declared.push(false);
        self.node_record.push(false);
        id
    }

    fn finish(self) -> Result<WebGraph> {
        let dangling_count = self.declared.iter().filter(|d| !**d).count();
        let mut graph = WebGraph::from_adjacency(self.keys, self.adjacency)?;
        graph.dangling_count = dangling_count;
        Ok(graph)
    }
}

/// Parses an edge list. A line with a single field declares a node with no
/// edges of its own; declaring the same node twice is an error.
pub fn parse_edge_list<R: BufRead>(reader: R, source: &str) -> Result<WebGraph> {
    let mut b = GraphBuilder::default();
    for item in content_lines(reader, source) {
        let (line_no, line) = item?;
        let fields: Vec<&str> = line.split('\t').collect();
        for f in &fields {
            validate_key(f).map_err(|m| Error::parse(source, line_no, m))?;
        }
        match fields.as_slice() {
            [node] => {
                let id = b.intern(node);
                if b.node_record[id.index()] {
                    return Err(Error::parse(
                        source,
                        line_no,
                        format!("duplicate external key {node:?}"),
                    ));
                }
                b.node_record[id.index()] = true;
                b.declared[id.index()] = true;
            }
            [src, dst] => {
                let s = b.intern(src);
                let d = b.intern(dst);
                b.declared[s.index()] = true;
                b.adjacency[s.index()].push(d);
            }
            _ => {
                return Err(Error::parse(
                    source,
                    line_no,
                    format!("expected `src<TAB>dst`, got {} fields", fields.len()),
                ))
            }
        }
    }
    b.finish()
}

pub fn load_edge_list(path: &Path) -> Result<WebGraph> {
    parse_edge_list(open(path)?, &source_name(path))
}

/// Ordered, duplicate-free, non-empty list of start pages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedSet {
    seeds: Vec<PageId>,
}

impl SeedSet {
    pub fn new(seeds: Vec<PageId>, graph: &WebGraph) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::invalid("seed set is empty"));
        }
        let mut seen = vec![false; graph.num_pages()];
        for &s in &seeds {
            if !graph.contains(s) {
                return Err(Error::invalid(format!("seed {s} is not a page")));
            }
            if std::mem::replace(&mut seen[s.index()], true) {
                return Err(Error::invalid(format!(
                    "duplicate seed {:?}",
                    graph.key(s)
                )));
            }
        }
        Ok(SeedSet { seeds })
    }

    pub fn as_slice(&self) -> &[PageId] {
        &self.seeds
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn write<W: Write>(&self, graph: &WebGraph, mut out: W) -> std::io::Result<()> {
        for &s in &self.seeds {
            writeln!(out, "{}", graph.key(s))?;
        }
        out.flush()
    }
}

pub fn parse_seeds<R: BufRead>(reader: R, source: &str, graph: &WebGraph) -> Result<SeedSet> {
    let mut seeds = Vec::new();
    let mut seen = vec![false; graph.num_pages()];
    for item in content_lines(reader, source) {
        let (line_no, line) = item?;
        let key = line.trim();
        let id = graph
            .id(key)
            .ok_or_else(|| Error::parse(source, line_no, format!("unknown seed {key:?}")))?;
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(Error::parse(source, line_no, format!("duplicate seed {key:?}")));
        }
        seeds.push(id);
    }
    SeedSet::new(seeds, graph)
}

pub fn load_seeds(path: &Path, graph: &WebGraph) -> Result<SeedSet> {
    parse_seeds(open(path)?, &source_name(path), graph)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub id: String,
    pub text: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QuerySet {
    queries: Vec<Query>,
}

impl QuerySet {
    pub fn new(queries: Vec<Query>) -> Result<Self> {
        let mut ids = std::collections::HashSet::new();
        for q in &queries {
            if q.text.trim().is_empty() {
                return Err(Error::invalid(format!("query {:?} has empty text", q.id)));
            }
            if !ids.insert(q.id.as_str()) {
                return Err(Error::invalid(format!("duplicate query id {:?}", q.id)));
            }
        }
        Ok(QuerySet { queries })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Query> {
        self.queries.iter()
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for q in &self.queries {
            writeln!(out, "{}\t{}", q.id, q.text)?;
        }
        out.flush()
    }
}

pub fn parse_queries<R: BufRead>(reader: R, source: &str) -> Result<QuerySet> {
    let mut queries = Vec::new();
    for item in content_lines(reader, source) {
        let (line_no, line) = item?;
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(source, line_no, "expected `qid<TAB>text`"))?;
        if id.is_empty() || text.trim().is_empty() {
            return Err(Error::parse(source, line_no, "empty query id or text"));
        }
        queries.push(Query {
            id: id.to_string(),
            text: text.to_string(),
        });
    }
    QuerySet::new(queries).map_err(|e| Error::parse(source, 0, e.to_string()))
}

pub fn load_queries(path: &Path) -> Result<QuerySet> {
    parse_queries(open(path)?, &source_name(path))
}

/// Graded relevance judgments restricted to corpus pages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<PageId, u32>>,
    relevant: Vec<bool>,
    relevant_count: usize,
    dropped_queries: usize,
    dropped_judgments: usize,
}

impl Qrels {
    /// Builds qrels from `(query, page, grade)` triples; later triples for the
    /// same `(query, page)` overwrite earlier ones. Queries without any
    /// positive grade are dropped.
    pub fn from_judgments<I>(num_pages: usize, triples: I) -> Self
    where
        I: IntoIterator<Item = (String, PageId, u32)>,
    {
        let mut judgments: BTreeMap<String, BTreeMap<PageId, u32>> = BTreeMap::new();
        for (qid, page, grade) in triples {
            if judgments.entry(qid.clone()).or_default().insert(page, grade).is_some() {
                warn!("duplicate judgment for ({qid}, {page}); last occurrence wins");
            }
        }
        Self::finish(num_pages, judgments, 0)
    }

    fn finish(
        num_pages: usize,
        mut judgments: BTreeMap<String, BTreeMap<PageId, u32>>,
        dropped_judgments: usize,
    ) -> Self {
        let before = judgments.len();
        judgments.retain(|_, j| j.values().any(|&g| g > 0));
        let dropped_queries = before - judgments.len();
        let mut relevant = vec![false; num_pages];
        for j in judgments.values() {
            for (&page, &grade) in j {
                if grade > 0 {
                    relevant[page.index()] = true;
                }
            }
        }
        let relevant_count = relevant.iter().filter(|r| **r).count();
        Qrels {
            judgments,
            relevant,
            relevant_count,
            dropped_queries,
            dropped_judgments,
        }
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn num_queries(&self) -> usize {
        self.judgments.len()
    }

    pub fn contains_query(&self, qid: &str) -> bool {
        self.judgments.contains_key(qid)
    }

    pub fn judgments(&self, qid: &str) -> Option<&BTreeMap<PageId, u32>> {
        self.judgments.get(qid)
    }

    pub fn grade(&self, qid: &str, page: PageId) -> u32 {
        self.judgments
            .get(qid)
            .and_then(|j| j.get(&page))
            .copied()
            .unwrap_or(0)
    }

    /// Pages with a positive grade for `qid`, in id order.
    pub fn relevant_pages<'a>(&'a self, qid: &str) -> impl Iterator<Item = PageId> + 'a {
        self.judgments
            .get(qid)
            .into_iter()
            .flat_map(|j| j.iter().filter(|(_, &g)| g > 0).map(|(&p, _)| p))
    }

    /// Whether the page is relevant to at least one query.
    pub fn is_relevant(&self, page: PageId) -> bool {
        self.relevant.get(page.index()).copied().unwrap_or(false)
    }

    pub fn relevant_union(&self) -> Vec<PageId> {
        self.relevant
            .iter()
            .enumerate()
            .filter(|(_, r)| **r)
            .map(|(i, _)| PageId(i as u32))
            .collect()
    }

    pub fn relevant_union_len(&self) -> usize {
        self.relevant_count
    }

    pub fn dropped_queries(&self) -> usize {
        self.dropped_queries
    }

    pub fn dropped_judgments(&self) -> usize {
        self.dropped_judgments
    }

    pub fn write<W: Write>(&self, graph: &WebGraph, mut out: W) -> std::io::Result<()> {
        for (qid, j) in &self.judgments {
            for (&page, &grade) in j {
                writeln!(out, "{qid} 0 {} {grade}", graph.key(page))?;
            }
        }
        out.flush()
    }
}

pub fn parse_qrels<R: BufRead>(reader: R, source: &str, graph: &WebGraph) -> Result<Qrels> {
    let mut judgments: BTreeMap<String, BTreeMap<PageId, u32>> = BTreeMap::new();
    let mut dropped_judgments = 0;
    for item in content_lines(reader, source) {
        let (line_no, line) = item?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, _iter, doc, grade] = fields.as_slice() else {
            return Err(Error::parse(
                source,
                line_no,
                format!("expected `qid 0 docid grade`, got {} fields", fields.len()),
            ));
        };
        let grade: i64 = grade
            .parse()
            .map_err(|_| Error::parse(source, line_no, format!("bad grade {grade:?}")))?;
        if grade < 0 {
            return Err(Error::parse(source, line_no, format!("negative grade {grade}")));
        }
        let grade = u32::try_from(grade)
            .map_err(|_| Error::parse(source, line_no, "grade out of range"))?;
        // Queries are kept in the map even if all their pages are absent so
        // they show up in the dropped-query count.
        let entry = judgments.entry(qid.to_string()).or_default();
        let Some(page) = graph.id(doc) else {
            dropped_judgments += 1;
            continue;
        };
        if entry.insert(page, grade).is_some() {
            warn!("{source}:{line_no}: duplicate judgment for ({qid}, {doc}); last occurrence wins");
        }
    }
    Ok(Qrels::finish(graph.num_pages(), judgments, dropped_judgments))
}

pub fn load_qrels(path: &Path, graph: &WebGraph) -> Result<Qrels> {
    parse_qrels(open(path)?, &source_name(path), graph)
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub type TermId = u32;

/// Tokenized page text with an interned vocabulary.
#[derive(Clone, Debug, Default)]
pub struct DocumentStore {
    vocab: HashMap<String, TermId>,
    docs: Vec<Option<Vec<TermId>>>,
    skipped: usize,
}

impl DocumentStore {
    pub fn new(num_pages: usize) -> Self {
        DocumentStore {
            vocab: HashMap::new(),
            docs: vec![None; num_pages],
            skipped: 0,
        }
    }

    /// Sets the text of a page, replacing any earlier text.
    pub fn insert(&mut self, page: PageId, text: &str) {
        let tokens = tokenize(text)
            .into_iter()
            .map(|t| {
                let next = self.vocab.len() as TermId;
                *self.vocab.entry(t).or_insert(next)
            })
            .collect();
        self.docs[page.index()] = Some(tokens);
    }

    pub fn tokens(&self, page: PageId) -> Option<&[TermId]> {
        self.docs.get(page.index()).and_then(|d| d.as_deref())
    }

    pub fn term_id(&self, term: &str) -> Option<TermId> {
        self.vocab.get(term).copied()
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn num_with_text(&self) -> usize {
        self.docs.iter().filter(|d| d.is_some()).count()
    }

    /// Records whose key was not a corpus page.
    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

pub fn parse_documents<R: BufRead>(
    reader: R,
    source: &str,
    graph: &WebGraph,
) -> Result<DocumentStore> {
    let mut store = DocumentStore::new(graph.num_pages());
    for item in content_lines(reader, source) {
        let (line_no, line) = item?;
        let (key, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(source, line_no, "expected `docid<TAB>text`"))?;
        match graph.id(key) {
            Some(page) => store.insert(page, text),
            None => {
                warn!("{source}:{line_no}: unknown document {key:?}, skipped");
                store.skipped += 1;
            }
        }
    }
    Ok(store)
}

pub fn load_documents(path: &Path, graph: &WebGraph) -> Result<DocumentStore> {
    parse_documents(open(path)?, &source_name(path), graph)
}
