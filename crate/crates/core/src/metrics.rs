//! Crawl effectiveness and efficiency metrics over traces.
//!
//! Everything here is a pure function of a trace joined with qrels. The join
//! is done once into [`RelevantArrivals`]: the crawl times at which relevant
//! pages arrived, for the union of all queries and for each query.

use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::corpus::{PageId, Qrels};
use crate::policy::PolicyKind;
use crate::simulator::CrawlTrace;

/// Default significance level for comparisons against the baseline.
pub const DEFAULT_ALPHA: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("crawl time must be at least 1")]
    ZeroTime,
    #[error("unknown query {0:?}")]
    UnknownQuery(String),
    #[error("speedup at n={n} is undefined: candidate has {candidate} and baseline {baseline} relevant arrivals")]
    SpeedupUndefined {
        n: usize,
        candidate: usize,
        baseline: usize,
    },
    #[error("paired samples have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("differences have zero variance")]
    ZeroVariance,
    #[error("counts out of range: {0}")]
    BadCounts(String),
    #[error("pooled proportion is {0}; the z statistic is undefined")]
    DegenerateProportion(f64),
}

pub type MetricResult<T> = Result<T, MetricError>;

/// Crawl times (1-based) at which relevant pages were crawled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelevantArrivals {
    union: Vec<usize>,
    per_query: BTreeMap<String, Vec<usize>>,
    relevant_totals: BTreeMap<String, usize>,
    crawled: usize,
}

impl RelevantArrivals {
    pub fn new(trace: &CrawlTrace, qrels: &Qrels) -> Self {
        Self::from_order(&trace.order, qrels)
    }

    pub fn from_order(order: &[PageId], qrels: &Qrels) -> Self {
        let mut page_queries: BTreeMap<PageId, Vec<&str>> = BTreeMap::new();
        let mut relevant_totals = BTreeMap::new();
        for qid in qrels.query_ids() {
            let mut total = 0;
            for page in qrels.relevant_pages(qid) {
                page_queries.entry(page).or_default().push(qid);
                total += 1;
            }
            relevant_totals.insert(qid.to_string(), total);
        }
        let mut per_query: BTreeMap<String, Vec<usize>> = relevant_totals
            .keys()
            .map(|q| (q.clone(), Vec::new()))
            .collect();
        let mut union = Vec::new();
        for (i, page) in order.iter().enumerate() {
            let t = i + 1;
            if let Some(queries) = page_queries.get(page) {
                union.push(t);
                for q in queries {
                    per_query.get_mut(*q).expect("query registered").push(t);
                }
            }
        }
        RelevantArrivals {
            union,
            per_query,
            relevant_totals,
            crawled: order.len(),
        }
    }

    /// Union-level arrivals from hand-built times, for speedup arithmetic.
    /// Times must be positive and non-decreasing.
    pub fn from_union_times(times: Vec<usize>) -> MetricResult<Self> {
        if times.first() == Some(&0) || times.windows(2).any(|w| w[0] > w[1]) {
            return Err(MetricError::BadCounts(format!("arrival times {times:?} are not ascending from 1")));
        }
        Ok(RelevantArrivals {
            crawled: times.last().copied().unwrap_or(0),
            union: times,
            per_query: BTreeMap::new(),
            relevant_totals: BTreeMap::new(),
        })
    }

    /// Arrival times of pages relevant to at least one query.
    pub fn union_times(&self) -> &[usize] {
        &self.union
    }

    pub fn query_times(&self, qid: &str) -> MetricResult<&[usize]> {
        self.per_query
            .get(qid)
            .map(Vec::as_slice)
            .ok_or_else(|| MetricError::UnknownQuery(qid.to_string()))
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.per_query.keys().map(String::as_str)
    }

    /// `|R^Q_t|`: union-relevant pages crawled by time `t`.
    pub fn union_count_at(&self, t: usize) -> usize {
        self.union.partition_point(|&a| a <= t)
    }

    pub fn query_count_at(&self, qid: &str, t: usize) -> MetricResult<usize> {
        Ok(self.query_times(qid)?.partition_point(|&a| a <= t))
    }

    /// Relevant pages of the query in the whole corpus.
    pub fn query_total(&self, qid: &str) -> MetricResult<usize> {
        self.relevant_totals
            .get(qid)
            .copied()
            .ok_or_else(|| MetricError::UnknownQuery(qid.to_string()))
    }

    pub fn crawled(&self) -> usize {
        self.crawled
    }
}

/// Fraction of the first `t` crawled pages that are relevant to some query.
pub fn harvest_rate(arrivals: &RelevantArrivals, t: usize) -> MetricResult<f64> {
    if t == 0 {
        return Err(MetricError::ZeroTime);
    }
    Ok(arrivals.union_count_at(t) as f64 / t as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DcgScale {
    /// Ideal DCG of the crawled relevant pages, unnormalized.
    #[default]
    Raw,
    /// Divided by the ideal DCG over all of the query's relevant pages.
    Normalized,
}

/// `sum_{i=1..count} 1 / log2(i + 1)`.
pub fn ideal_dcg(count: usize) -> f64 {
    (1..=count).map(|i| 1.0 / ((i + 1) as f64).log2()).sum()
}

/// The best DCG a ranker could reach for `qid` using pages crawled by `t`.
pub fn max_ndcg(arrivals: &RelevantArrivals, qid: &str, t: usize, scale: DcgScale) -> MetricResult<f64> {
    if t == 0 {
        return Err(MetricError::ZeroTime);
    }
    let raw = ideal_dcg(arrivals.query_count_at(qid, t)?);
    match scale {
        DcgScale::Raw => Ok(raw),
        DcgScale::Normalized => {
            let total = arrivals.query_total(qid)?;
            Ok(if total == 0 { 0.0 } else { raw / ideal_dcg(total) })
        }
    }
}

/// `τ_B(n) / τ_A(n)` where `τ_X(n)` is the time of X's n-th relevant arrival.
pub fn speedup(candidate: &RelevantArrivals, baseline: &RelevantArrivals, n: usize) -> MetricResult<f64> {
    let (a, b) = (candidate.union_times(), baseline.union_times());
    if n == 0 || n > a.len() || n > b.len() {
        return Err(MetricError::SpeedupUndefined {
            n,
            candidate: a.len(),
            baseline: b.len(),
        });
    }
    Ok(b[n - 1] as f64 / a[n - 1] as f64)
}

/// Largest `n` for which the speedup is defined.
pub fn common_arrivals(candidate: &RelevantArrivals, baseline: &RelevantArrivals) -> usize {
    candidate.union_times().len().min(baseline.union_times().len())
}

/// Mean of `speedup(n)` over every `n` in `1..=common_arrivals`.
pub fn mean_speedup(candidate: &RelevantArrivals, baseline: &RelevantArrivals) -> MetricResult<f64> {
    let n_max = common_arrivals(candidate, baseline);
    if n_max == 0 {
        return Err(MetricError::SpeedupUndefined {
            n: 1,
            candidate: candidate.union_times().len(),
            baseline: baseline.union_times().len(),
        });
    }
    let sum: f64 = (1..=n_max)
        .map(|n| speedup(candidate, baseline, n))
        .sum::<MetricResult<f64>>()?;
    Ok(sum / n_max as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestOutcome {
    pub statistic: f64,
    /// Two-tailed.
    pub p_value: f64,
}

impl TestOutcome {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Significance of an outcome; undefined tests count as not significant.
pub fn is_significant(outcome: &MetricResult<TestOutcome>, alpha: f64) -> bool {
    outcome.as_ref().is_ok_and(|o| o.significant(alpha))
}

/// Two-tailed paired Student's t-test on `xs - ys` with `n - 1` degrees of
/// freedom.
pub fn paired_t_test(xs: &[f64], ys: &[f64]) -> MetricResult<TestOutcome> {
    if xs.len() != ys.len() {
        return Err(MetricError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(MetricError::TooFewSamples { needed: 2, got: n });
    }
    let diffs: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var <= 0.0 || !var.is_finite() {
        return Err(MetricError::ZeroVariance);
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("df >= 1");
    Ok(TestOutcome {
        statistic: t,
        p_value: (2.0 * dist.sf(t.abs())).min(1.0),
    })
}

/// Two-tailed two-proportion z-test with pooled variance.
pub fn two_proportion_z_test(x1: u64, n1: u64, x2: u64, n2: u64) -> MetricResult<TestOutcome> {
    if n1 == 0 || n2 == 0 || x1 > n1 || x2 > n2 {
        return Err(MetricError::BadCounts(format!("({x1}/{n1}, {x2}/{n2})")));
    }
    let (p1, p2) = (x1 as f64 / n1 as f64, x2 as f64 / n2 as f64);
    let pooled = (x1 + x2) as f64 / (n1 + n2) as f64;
    if pooled <= 0.0 || pooled >= 1.0 {
        return Err(MetricError::DegenerateProportion(pooled));
    }
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    let z = (p1 - p2) / se;
    Ok(TestOutcome {
        statistic: z,
        p_value: erfc(z.abs() / std::f64::consts::SQRT_2),
    })
}

/// Which query set and metric a series describes.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeriesLabel {
    pub policy: PolicyKind,
    pub metric: String,
    pub query_set: String,
}

/// Values of one metric at increasing crawl times.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSeries {
    pub label: SeriesLabel,
    points: Vec<(usize, f64)>,
}

impl MetricSeries {
    pub fn new(label: SeriesLabel) -> Self {
        MetricSeries {
            label,
            points: Vec::new(),
        }
    }

    /// Appends a point; `t` must exceed the previous one and `value` must be
    /// finite.
    pub fn push(&mut self, t: usize, value: f64) -> MetricResult<()> {
        if self.points.last().is_some_and(|&(last, _)| last >= t) {
            return Err(MetricError::BadCounts(format!("time {t} is not increasing")));
        }
        if !value.is_finite() {
            return Err(MetricError::BadCounts(format!("value {value} is not finite")));
        }
        self.points.push((t, value));
        Ok(())
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.points
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arrivals(union: &[usize]) -> RelevantArrivals {
        RelevantArrivals {
            union: union.to_vec(),
            per_query: BTreeMap::new(),
            relevant_totals: BTreeMap::new(),
            crawled: union.last().copied().unwrap_or(0),
        }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * b.abs().max(1e-300)
    }

    /// Qrels over pages 0..10: q1 -> {1, 4}, q2 -> {4, 7, 9}.
    fn fixture() -> (Vec<PageId>, Qrels) {
        let order: Vec<PageId> = (0..10).map(PageId::new).collect();
        let qrels = Qrels::from_judgments(
            12,
            [
                ("q1".to_string(), PageId::new(1), 1),
                ("q1".to_string(), PageId::new(4), 2),
                ("q2".to_string(), PageId::new(4), 1),
                ("q2".to_string(), PageId::new(7), 1),
                ("q2".to_string(), PageId::new(9), 1),
                ("q2".to_string(), PageId::new(11), 1),
            ],
        );
        (order, qrels)
    }

    #[test]
    fn arrivals_join() {
        let (order, qrels) = fixture();
        let a = RelevantArrivals::from_order(&order, &qrels);
        assert_eq!(a.union_times(), [2, 5, 8, 10]);
        assert_eq!(a.query_times("q1").unwrap(), [2, 5]);
        assert_eq!(a.query_times("q2").unwrap(), [5, 8, 10]);
        assert_eq!(a.query_total("q2").unwrap(), 4);
        assert!(a.query_times("q3").is_err());
    }

    #[test]
    fn harvest_rate_examples() {
        let (order, qrels) = fixture();
        let a = RelevantArrivals::from_order(&order, &qrels);
        // independent count: relevant pages among the first 10
        let direct = order.iter().filter(|p| qrels.is_relevant(**p)).count();
        assert_eq!(direct, 4);
        assert!(close(harvest_rate(&a, 10).unwrap(), 0.4));
        assert!(close(harvest_rate(&arrivals(&[1, 4, 9]), 10).unwrap(), 0.3));
        assert_eq!(harvest_rate(&arrivals(&[]), 10).unwrap(), 0.0);
        assert_eq!(harvest_rate(&arrivals(&[1, 2, 3]), 3).unwrap(), 1.0);
        assert_eq!(harvest_rate(&a, 0), Err(MetricError::ZeroTime));
    }

    #[test]
    fn max_ndcg_examples() {
        assert_eq!(ideal_dcg(0), 0.0);
        assert_eq!(ideal_dcg(1), 1.0);
        assert!(close(ideal_dcg(3), 2.130_929_753_571_457_8));

        let (order, qrels) = fixture();
        let a = RelevantArrivals::from_order(&order, &qrels);
        assert_eq!(max_ndcg(&a, "q2", 4, DcgScale::Raw).unwrap(), 0.0);
        assert_eq!(max_ndcg(&a, "q2", 5, DcgScale::Raw).unwrap(), 1.0);
        assert!(close(max_ndcg(&a, "q2", 10, DcgScale::Raw).unwrap(), 2.130_929_753_571_457_8));
        // q2 has a fourth relevant page (11) that was never crawled
        let norm = max_ndcg(&a, "q2", 10, DcgScale::Normalized).unwrap();
        assert!(close(norm, 2.130_929_753_571_457_8 / (2.130_929_753_571_457_8 + 1.0 / 5f64.log2())));
        assert_eq!(max_ndcg(&a, "q1", 10, DcgScale::Normalized).unwrap(), 1.0);
        assert!(matches!(max_ndcg(&a, "nope", 3, DcgScale::Raw), Err(MetricError::UnknownQuery(_))));
    }

    #[test]
    fn speedup_examples() {
        let a = arrivals(&[10, 20, 30, 40, 100]);
        let b = arrivals(&[20, 40, 60, 80, 160]);
        assert!(close(speedup(&a, &b, 5).unwrap(), 1.6));
        let c = arrivals(&[1, 2, 3, 4, 200]);
        let d = arrivals(&[1, 2, 3, 4, 100]);
        assert!(close(speedup(&c, &d, 5).unwrap(), 0.5));
        assert_eq!(speedup(&a, &a, 3).unwrap(), 1.0);
        assert!(matches!(speedup(&a, &arrivals(&[1]), 2), Err(MetricError::SpeedupUndefined { .. })));
        assert!(speedup(&a, &b, 0).is_err());
    }

    #[test]
    fn mean_speedup_examples() {
        assert!(close(mean_speedup(&arrivals(&[10, 20]), &arrivals(&[20, 20])).unwrap(), 1.5));
        let a = arrivals(&[3, 9, 27]);
        assert_eq!(mean_speedup(&a, &a).unwrap(), 1.0);
        // only n = 1 is common
        assert!(close(mean_speedup(&a, &arrivals(&[6])).unwrap(), 2.0));
        assert!(mean_speedup(&a, &arrivals(&[])).is_err());
    }

    // p-values below are from scipy.stats (ttest_rel, norm.sf).
    #[test]
    fn paired_t_test_examples() {
        let r = paired_t_test(&[0.1, 0.2, 0.3], &[0.0, 0.0, 0.0]).unwrap();
        assert!(close(r.statistic, 3.464_101_615_137_755_7));
        assert!((r.p_value - 0.074_179_900_227_448_5).abs() < 1e-6);

        let flipped = paired_t_test(&[0.0, 0.0, 0.0], &[0.1, 0.2, 0.3]).unwrap();
        assert!(close(flipped.statistic, -r.statistic));
        assert!((flipped.p_value - r.p_value).abs() < 1e-12);

        let xs = [0.61, 0.72, 0.55, 0.80, 0.67, 0.59, 0.73, 0.70];
        let ys = [0.58, 0.69, 0.57, 0.71, 0.60, 0.61, 0.65, 0.66];
        let r = paired_t_test(&xs, &ys).unwrap();
        assert!((r.statistic - 2.525_176_868_780_381).abs() < 1e-9);
        assert!((r.p_value - 0.039_510_438_037_263_4).abs() < 1e-6);

        assert_eq!(paired_t_test(&xs, &xs), Err(MetricError::ZeroVariance));
        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[2.0]).is_err());
    }

    #[test]
    fn z_test_examples() {
        let r = two_proportion_z_test(50, 100, 30, 100).unwrap();
        assert!(close(r.statistic, 0.2 / (0.4f64 * 0.6 * 0.02).sqrt()));
        assert!(close(r.statistic, 2.886_751_345_948_129));
        assert!((r.p_value - 0.003_892_417_122_778_628).abs() < 1e-6);
        assert!(r.significant(0.01));

        let s = two_proportion_z_test(30, 100, 50, 100).unwrap();
        assert!(close(s.statistic, -r.statistic));
        assert!((s.p_value - r.p_value).abs() < 1e-15);

        let e = two_proportion_z_test(20, 100, 40, 200).unwrap();
        assert_eq!(e.statistic, 0.0);
        assert!((e.p_value - 1.0).abs() < 1e-12);

        let u = two_proportion_z_test(120, 1000, 90, 800).unwrap();
        assert!((u.statistic - 0.492_531_827_477_338_37).abs() < 1e-9);
        assert!((u.p_value - 0.622_343_427_840_078_8).abs() < 1e-6);

        assert!(matches!(two_proportion_z_test(0, 10, 0, 10), Err(MetricError::DegenerateProportion(_))));
        assert!(matches!(two_proportion_z_test(10, 10, 5, 5), Err(MetricError::DegenerateProportion(_))));
        assert!(two_proportion_z_test(11, 10, 5, 5).is_err());
        assert!(two_proportion_z_test(0, 0, 5, 5).is_err());
    }

    #[test]
    fn series_rejects_non_increasing_time() {
        let mut s = MetricSeries::new(SeriesLabel {
            policy: PolicyKind::Bfs,
            metric: "hr".into(),
            query_set: "nl".into(),
        });
        s.push(5, 0.1).unwrap();
        assert!(s.push(5, 0.2).is_err());
        assert!(s.push(6, f64::NAN).is_err());
        s.push(10, 0.2).unwrap();
        assert_eq!(s.points(), [(5, 0.1), (10, 0.2)]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn sorted_times() -> impl Strategy<Value = Vec<usize>> {
            prop::collection::btree_set(1usize..500, 1..60).prop_map(|s| s.into_iter().collect())
        }

        proptest! {
            #[test]
            fn speedup_reciprocity(a in sorted_times(), b in sorted_times()) {
                let (a, b) = (arrivals(&a), arrivals(&b));
                for n in 1..=common_arrivals(&a, &b) {
                    let ab = speedup(&a, &b, n).unwrap();
                    let ba = speedup(&b, &a, n).unwrap();
                    prop_assert!((ab * ba - 1.0).abs() < 1e-12);
                    let (ta, tb) = (a.union_times()[n - 1], b.union_times()[n - 1]);
                    prop_assert_eq!(ab > 1.0, ta < tb);
                }
            }

            #[test]
            fn hr_times_t_is_monotone_count(a in sorted_times()) {
                let a = arrivals(&a);
                let mut prev = 0usize;
                for t in 1..520 {
                    let count = harvest_rate(&a, t).unwrap() * t as f64;
                    let rounded = count.round();
                    prop_assert!((count - rounded).abs() < 1e-9);
                    prop_assert!(rounded as usize >= prev);
                    prev = rounded as usize;
                }
            }
        }
    }
}
