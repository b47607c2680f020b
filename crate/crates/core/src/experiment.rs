//! Per-checkpoint evaluation of crawl traces, comparison against a baseline
//! policy, and the CSV formats those produce.
//!
//! Metric names in the output: `hr`, `max_ndcg` and, when document text is
//! available, `ndcg@10`. Significance uses the two-proportion z-test for
//! `hr` and the paired t-test over per-query values for the other two.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{DocumentStore, Qrels, QuerySet};
use crate::error::{Error, Result};
use crate::metrics::{
    harvest_rate, is_significant, max_ndcg, mean_speedup, common_arrivals, paired_t_test,
    two_proportion_z_test, DcgScale, RelevantArrivals, DEFAULT_ALPHA,
};
use crate::policy::PolicyKind;
use crate::retrieval::{evaluate_checkpoint, RetrievalPipeline};
use crate::simulator::CrawlTrace;

pub const METRIC_HR: &str = "hr";
pub const METRIC_MAX_NDCG: &str = "max_ndcg";
pub const METRIC_NDCG10: &str = "ndcg@10";

/// One judged query set. `queries` is needed only for `ndcg@10`.
#[derive(Clone, Copy, Debug)]
pub struct QuerySetInput<'a> {
    pub name: &'a str,
    pub qrels: &'a Qrels,
    pub queries: Option<&'a QuerySet>,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub baseline: PolicyKind,
    pub alpha: f64,
    pub dcg_scale: DcgScale,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            baseline: PolicyKind::Bfs,
            alpha: DEFAULT_ALPHA,
            dcg_scale: DcgScale::Raw,
        }
    }
}

/// Values of one metric for one trace and query set at one checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricPoint {
    pub metric: &'static str,
    pub t: usize,
    pub value: f64,
    /// Relevant pages crawled by `t` (for `hr`).
    pub count: usize,
    /// Per-query values in query-id order (for the nDCG metrics).
    pub per_query: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SetEvaluation {
    pub query_set: String,
    pub arrivals: RelevantArrivals,
    pub points: Vec<MetricPoint>,
}

#[derive(Clone, Debug)]
pub struct TraceEvaluation {
    pub policy: PolicyKind,
    pub sets: Vec<SetEvaluation>,
}

/// Computes every metric at every checkpoint of `trace`.
pub fn evaluate_trace(
    trace: &CrawlTrace,
    sets: &[QuerySetInput<'_>],
    docs: Option<&DocumentStore>,
    scale: DcgScale,
) -> Result<TraceEvaluation> {
    let mut out = Vec::with_capacity(sets.len());
    for set in sets {
        let arrivals = RelevantArrivals::new(trace, set.qrels);
        let qids: Vec<&str> = arrivals.query_ids().collect();
        let mut points = Vec::new();
        for &t in &trace.checkpoints {
            points.push(MetricPoint {
                metric: METRIC_HR,
                t,
                value: harvest_rate(&arrivals, t)?,
                count: arrivals.union_count_at(t),
                per_query: Vec::new(),
            });
        }
        for &t in &trace.checkpoints {
            let per_query = qids
                .iter()
                .map(|q| max_ndcg(&arrivals, q, t, scale))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            points.push(MetricPoint {
                metric: METRIC_MAX_NDCG,
                t,
                value: mean(&per_query),
                count: 0,
                per_query,
            });
        }
        if let (Some(docs), Some(queries)) = (docs, set.queries) {
            let pipeline = RetrievalPipeline::new(docs, queries);
            for &t in &trace.checkpoints {
                let eval = evaluate_checkpoint(trace, t, &pipeline, set.qrels)?;
                points.push(MetricPoint {
                    metric: METRIC_NDCG10,
                    t,
                    value: eval.mean,
                    count: 0,
                    per_query: eval.per_query.into_values().collect(),
                });
            }
        }
        out.push(SetEvaluation {
            query_set: set.name.to_string(),
            arrivals,
            points,
        });
    }
    Ok(TraceEvaluation {
        policy: trace.policy(),
        sets: out,
    })
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// A row of the single-trace evaluation CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub policy: String,
    pub query_set: String,
    pub metric: String,
    pub t: usize,
    pub value: f64,
}

pub fn eval_rows(eval: &TraceEvaluation) -> Vec<EvalRow> {
    let mut rows = Vec::new();
    for set in &eval.sets {
        for p in &set.points {
            rows.push(EvalRow {
                policy: eval.policy.name().to_string(),
                query_set: set.query_set.clone(),
                metric: p.metric.to_string(),
                t: p.t,
                value: p.value,
            });
        }
    }
    rows
}

/// A row of the comparison CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub query_set: String,
    pub metric: String,
    pub t: usize,
    pub value: f64,
    pub significant_vs_baseline: bool,
}

/// Mean speedup of one policy over the baseline. `mean_speedup` is empty
/// when neither crawl reached a relevant page.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub policy: String,
    pub baseline: String,
    pub query_set: String,
    pub mean_speedup: Option<f64>,
    pub n_max: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub speedups: Vec<SpeedupRow>,
}

fn check_comparable(traces: &[CrawlTrace], baseline: PolicyKind) -> Result<usize> {
    let Some(first) = traces.first() else {
        return Err(Error::invalid("no traces to compare"));
    };
    for t in &traces[1..] {
        if t.graph_digest != first.graph_digest {
            return Err(Error::invalid(format!(
                "traces come from different corpora (digest {} vs {})",
                first.graph_digest, t.graph_digest
            )));
        }
        if t.checkpoints != first.checkpoints {
            return Err(Error::invalid(format!(
                "{} and {} traces have different checkpoints",
                first.policy(),
                t.policy()
            )));
        }
    }
    for (i, t) in traces.iter().enumerate() {
        if traces[..i].iter().any(|u| u.policy() == t.policy()) {
            return Err(Error::invalid(format!("policy {} appears twice", t.policy())));
        }
    }
    traces
        .iter()
        .position(|t| t.policy() == baseline)
        .ok_or_else(|| Error::invalid(format!("no trace for baseline policy {baseline}")))
}

/// Evaluates every trace and flags differences from the baseline trace.
/// Traces are evaluated on parallel threads; output order follows `traces`.
pub fn compare(
    traces: &[CrawlTrace],
    sets: &[QuerySetInput<'_>],
    docs: Option<&DocumentStore>,
    opts: &EvalOptions,
) -> Result<Comparison> {
    let base_idx = check_comparable(traces, opts.baseline)?;
    let evals: Vec<TraceEvaluation> = std::thread::scope(|s| {
        let handles: Vec<_> = traces
            .iter()
            .map(|t| s.spawn(move || evaluate_trace(t, sets, docs, opts.dcg_scale)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    let base = &evals[base_idx];

    let mut out = Comparison::default();
    for eval in &evals {
        let is_base = eval.policy == opts.baseline;
        for (set, base_set) in eval.sets.iter().zip(&base.sets) {
            for (p, b) in set.points.iter().zip(&base_set.points) {
                debug_assert_eq!((p.metric, p.t), (b.metric, b.t));
                let significant = !is_base
                    && match p.metric {
                        METRIC_HR => is_significant(
                            &two_proportion_z_test(p.count as u64, p.t as u64, b.count as u64, b.t as u64),
                            opts.alpha,
                        ),
                        _ => is_significant(&paired_t_test(&p.per_query, &b.per_query), opts.alpha),
                    };
                out.rows.push(ComparisonRow {
                    policy: eval.policy.name().to_string(),
                    query_set: set.query_set.clone(),
                    metric: p.metric.to_string(),
                    t: p.t,
                    value: p.value,
                    significant_vs_baseline: significant,
                });
            }
            out.speedups.push(SpeedupRow {
                policy: eval.policy.name().to_string(),
                baseline: opts.baseline.name().to_string(),
                query_set: set.query_set.clone(),
                mean_speedup: mean_speedup(&set.arrivals, &base_set.arrivals).ok(),
                n_max: common_arrivals(&set.arrivals, &base_set.arrivals),
            });
        }
    }
    Ok(out)
}

pub const EVAL_COLUMNS: [&str; 5] = ["policy", "query_set", "metric", "t", "value"];
pub const COMPARISON_COLUMNS: [&str; 6] = ["policy", "query_set", "metric", "t", "value", "significant_vs_baseline"];
pub const SPEEDUP_COLUMNS: [&str; 5] = ["policy", "baseline", "query_set", "mean_speedup", "n_max"];
pub const REPORT_COLUMNS: [&str; 7] = ["series", "policy", "query_set", "metric", "t", "value", "significant"];

/// Writes `rows` under `columns`; the header is present even with no rows.
pub fn write_csv<W: Write, T: Serialize>(columns: &[&str], rows: &[T], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(columns)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Reads rows, rejecting a header that differs from `columns`.
pub fn read_csv<R: Read, T: for<'de> Deserialize<'de>>(columns: &[&str], source: &str, input: R) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.len() != columns.len() || header.iter().zip(columns).any(|(a, b)| a != *b) {
        return Err(Error::invalid(format!(
            "{source}: expected columns {}, found {}",
            columns.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// One observation of the long-format report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// `checkpoint` for per-checkpoint metrics, `speedup` for mean speedups.
    pub series: String,
    pub policy: String,
    pub query_set: String,
    pub metric: String,
    /// Crawl time, or the largest relevant count for speedups.
    pub t: usize,
    pub value: Option<f64>,
    pub significant: Option<bool>,
}

pub fn report(rows: &[ComparisonRow], speedups: &[SpeedupRow]) -> Vec<ReportRow> {
    let mut out: Vec<ReportRow> = rows
        .iter()
        .map(|r| ReportRow {
            series: "checkpoint".into(),
            policy: r.policy.clone(),
            query_set: r.query_set.clone(),
            metric: r.metric.clone(),
            t: r.t,
            value: Some(r.value),
            significant: Some(r.significant_vs_baseline),
        })
        .collect();
    out.extend(speedups.iter().map(|s| ReportRow {
        series: "speedup".into(),
        policy: s.policy.clone(),
        query_set: s.query_set.clone(),
        metric: format!("mean_speedup_vs_{}", s.baseline),
        t: s.n_max,
        value: s.mean_speedup,
        significant: None,
    }));
    out
}
