//! Effectiveness and efficiency measures: coverage, hit rate, ranked
//! retrieval metrics, threshold tuning and two-sample t-tests.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::flat_index::ResultSet;
use crate::trec::{Qrels, Run};

/// Fraction of the exact top-`k` that the cache's top-`k` recovers.
pub fn coverage_at(cache_result: &ResultSet, index_result: &ResultSet, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let available = cache_result.len().min(index_result.len());
    if k > available {
        return Err(Error::CutoffTooLarge { k, available });
    }
    Ok(overlap(cache_result, index_result, k) as f64 / k as f64)
}

/// Like [`coverage_at`] but tolerates short result lists: the denominator is
/// the number of exact results actually available at `k`.
pub fn coverage_clamped(cache_result: &ResultSet, index_result: &ResultSet, k: usize) -> f64 {
    let denom = k.min(index_result.len());
    if denom == 0 {
        return 1.0;
    }
    overlap(cache_result, index_result, k) as f64 / denom as f64
}

fn overlap(a: &ResultSet, b: &ResultSet, k: usize) -> usize {
    let top: HashSet<&str> = a.ids().take(k).collect();
    b.ids().take(k).filter(|id| top.contains(id)).count()
}

/// Share of non-first queries answered by the cache.
///
/// Each inner iterator holds one conversation's hit flags in turn order.
pub fn hit_rate<C, I>(conversations: C) -> Result<f64>
where
    C: IntoIterator<Item = I>,
    I: IntoIterator<Item = bool>,
{
    let mut hits = 0usize;
    let mut eligible = 0usize;
    for conv in conversations {
        let mut turns = 0usize;
        for hit in conv {
            if turns > 0 {
                eligible += 1;
                hits += usize::from(hit);
            }
            turns += 1;
        }
        if turns == 0 {
            return Err(Error::InvalidParameter("conversation with no turns".into()));
        }
    }
    if eligible == 0 {
        return Err(Error::NoEligibleQueries);
    }
    Ok(hits as f64 / eligible as f64)
}

/// Cutoffs for [`rank_metrics`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCutoffs {
    pub map: usize,
    pub mrr: usize,
    pub ndcg: Vec<usize>,
    pub precision: Vec<usize>,
}

impl Default for MetricCutoffs {
    fn default() -> Self {
        Self {
            map: 200,
            mrr: 200,
            ndcg: vec![3],
            precision: vec![1, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    /// Macro-averages over evaluated topics, keyed like `"map@200"`.
    pub mean: BTreeMap<String, f64>,
    pub per_topic: BTreeMap<String, BTreeMap<String, f64>>,
    pub evaluated: usize,
    /// Run topics without any judgment.
    pub skipped: usize,
}

impl RankMetrics {
    /// Values of one metric in topic order, for significance testing.
    pub fn column(&self, metric: &str) -> Vec<f64> {
        self.per_topic
            .values()
            .filter_map(|m| m.get(metric).copied())
            .collect()
    }
}

fn average_precision(
    ranked: &[String],
    judged: &dyn Fn(&str) -> u32,
    relevant: usize,
    k: usize,
) -> f64 {
    if relevant == 0 {
        return 0.0;
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for (i, doc) in ranked.iter().take(k).enumerate() {
        if judged(doc) >= 1 {
            found += 1;
            sum += found as f64 / (i + 1) as f64;
        }
    }
    sum / relevant as f64
}

fn reciprocal_rank(ranked: &[String], judged: &dyn Fn(&str) -> u32, k: usize) -> f64 {
    ranked
        .iter()
        .take(k)
        .position(|d| judged(d) >= 1)
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

fn dcg<I: IntoIterator<Item = u32>>(grades: I, k: usize) -> f64 {
    grades
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

fn precision(ranked: &[String], judged: &dyn Fn(&str) -> u32, k: usize) -> f64 {
    ranked.iter().take(k).filter(|d| judged(d) >= 1).count() as f64 / k as f64
}

/// MAP, MRR, nDCG and precision at the given cutoffs, macro-averaged.
///
/// nDCG uses gains `2^grade - 1` and discounts `1 / log2(rank + 1)`; the ideal
/// ordering comes from the topic's judgments. Unjudged documents count as
/// non-relevant, and a document is relevant for the binary measures when its
/// grade is at least 1.
pub fn rank_metrics(run: &Run, qrels: &Qrels, cutoffs: &MetricCutoffs) -> Result<RankMetrics> {
    if run.is_empty() {
        return Err(Error::EmptyRun);
    }
    let mut per_topic = BTreeMap::new();
    let mut skipped = 0;
    for (topic, ranked) in run {
        let Some(judgments) = qrels.topic(topic) else {
            skipped += 1;
            continue;
        };
        let judged = |d: &str| judgments.get(d).copied().unwrap_or(0);
        let relevant = judgments.values().filter(|&&g| g >= 1).count();
        let mut ideal: Vec<u32> = judgments.values().copied().collect();
        ideal.sort_unstable_by(|a, b| b.cmp(a));

        let mut m = BTreeMap::new();
        m.insert(
            format!("map@{}", cutoffs.map),
            average_precision(ranked, &judged, relevant, cutoffs.map),
        );
        m.insert(
            format!("mrr@{}", cutoffs.mrr),
            reciprocal_rank(ranked, &judged, cutoffs.mrr),
        );
        for &k in &cutoffs.ndcg {
            let ideal_dcg = dcg(ideal.iter().copied(), k);
            let value = if ideal_dcg > 0.0 {
                dcg(ranked.iter().map(|d| judged(d)), k) / ideal_dcg
            } else {
                0.0
            };
            m.insert(format!("ndcg@{k}"), value);
        }
        for &k in &cutoffs.precision {
            m.insert(format!("p@{k}"), precision(ranked, &judged, k));
        }
        per_topic.insert(topic.clone(), m);
    }
    if per_topic.is_empty() {
        return Err(Error::EmptyRun);
    }
    let mut mean: BTreeMap<String, f64> = BTreeMap::new();
    for metrics in per_topic.values() {
        for (name, v) in metrics {
            *mean.entry(name.clone()).or_default() += v;
        }
    }
    let n = per_topic.len() as f64;
    mean.values_mut().for_each(|v| *v /= n);
    Ok(RankMetrics {
        mean,
        evaluated: per_topic.len(),
        per_topic,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunePoint {
    pub query_id: String,
    pub r_hat: f64,
    pub coverage: f64,
}

/// Smallest threshold that sends every low-coverage point to the back-end.
///
/// Takes the largest `r_hat` among points with `coverage <= floor`, after
/// discarding the `outliers` largest of them, and returns the next
/// representable value above it (hits are `r_hat >= epsilon`, so the maximum
/// itself would still hit). Never below 0.
pub fn tune_epsilon(points: &[TunePoint], coverage_floor: f64, outliers: usize) -> Result<f64> {
    let mut low: Vec<f64> = points
        .iter()
        .filter(|p| p.coverage <= coverage_floor)
        .map(|p| p.r_hat)
        .collect();
    low.sort_unstable_by(|a, b| b.total_cmp(a));
    let max = low
        .get(outliers)
        .copied()
        .ok_or(Error::NoLowCoveragePoints {
            floor: coverage_floor,
        })?;
    Ok(max.next_up().max(0.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TTestKind {
    /// Pooled-variance Student's t.
    #[default]
    Student,
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
}

impl TTest {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p < alpha
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided two-sample t-test.
pub fn two_sample_ttest(a: &[f64], b: &[f64], kind: TTestKind) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientSamples(a.len(), b.len()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (se2, df) = match kind {
        TTestKind::Student => {
            let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
            (pooled * (1.0 / na + 1.0 / nb), na + nb - 2.0)
        }
        TTestKind::Welch => {
            let (sa, sb) = (va / na, vb / nb);
            let se2 = sa + sb;
            let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
            (se2, df)
        }
    };
    let diff = ma - mb;
    if se2 <= 0.0 {
        // both samples constant
        return Ok(if diff == 0.0 {
            TTest { t: 0.0, p: 1.0, df }
        } else {
            TTest {
                t: diff.signum() * f64::INFINITY,
                p: 0.0,
                df,
            }
        });
    }
    let t = diff / se2.sqrt();
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::InvalidParameter(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, p, df })
}
