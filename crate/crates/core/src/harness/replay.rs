//! Conversation replay under the no-caching, static and dynamic configurations.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{coverage_clamped, hit_rate, rank_metrics, MetricCutoffs, RankMetrics};
use crate::flat_index::{DocumentStore, ResultSet};
use crate::geometry::lift_query;
use crate::harness::data::Conversation;
use crate::metric_cache::{CacheConfig, CachePolicy, MetricCache, QualityRule};
use crate::trec::{Qrels, Run};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every query goes to the back-end for its top-k.
    None,
    Static,
    Dynamic,
}

impl Mode {
    pub fn policy(self) -> Option<CachePolicy> {
        match self {
            Mode::None => None,
            Mode::Static => Some(CachePolicy::Static),
            Mode::Dynamic => Some(CachePolicy::Dynamic),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    /// Query cutoff: results served per turn.
    pub k: usize,
    /// Cache cutoff: documents fetched per back-end call.
    pub cache_cutoff: usize,
    pub epsilon: f64,
    #[serde(default)]
    pub quality_rule: QualityRule,
    /// Fixed delay added to the measured latency of every back-end call.
    #[serde(default)]
    pub simulated_backend_latency_ms: Option<f64>,
    pub repeats: usize,
    pub seed: u64,
    /// Replay conversations concurrently.
    #[serde(default)]
    pub parallel: bool,
    #[serde(default)]
    pub max_cache_docs: Option<usize>,
    pub tag: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Dynamic,
            k: 10,
            cache_cutoff: 1000,
            epsilon: 0.04,
            quality_rule: QualityRule::AnyBall,
            simulated_backend_latency_ms: None,
            repeats: 3,
            seed: 0,
            parallel: false,
            max_cache_docs: None,
            tag: "histcache".into(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if self.k > self.cache_cutoff {
            return Err(Error::InvalidParameter(format!(
                "k = {} exceeds cache cutoff {}",
                self.k, self.cache_cutoff
            )));
        }
        if self.repeats == 0 {
            return Err(Error::InvalidParameter("repeats must be at least 1".into()));
        }
        if let Some(ms) = self.simulated_backend_latency_ms {
            if !(ms.is_finite() && ms >= 0.0) {
                return Err(Error::InvalidParameter(
                    "simulated latency must be >= 0".into(),
                ));
            }
        }
        if self.tag.chars().any(char::is_whitespace) || self.tag.is_empty() {
            return Err(Error::InvalidParameter(
                "run tag must be a non-empty word".into(),
            ));
        }
        if let Some(policy) = self.mode.policy() {
            self.cache_config(policy).validate()?;
        }
        Ok(())
    }

    pub fn cache_config(&self, policy: CachePolicy) -> CacheConfig {
        CacheConfig {
            policy,
            epsilon: self.epsilon,
            cache_cutoff: self.cache_cutoff,
            quality_rule: self.quality_rule,
            max_docs: self.max_cache_docs,
        }
    }
}

/// Per-query measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub conversation: String,
    pub turn: String,
    pub topic: String,
    pub hit: bool,
    pub backend_calls: usize,
    pub r_hat_best: Option<f64>,
    pub r_hat_closest: Option<f64>,
    pub coverage: f64,
    pub cache_docs: usize,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub queries: usize,
    pub conversations: usize,
    pub hits: usize,
    pub misses: usize,
    pub backend_calls: usize,
    /// `None` without a cache, or when no conversation has a second turn.
    pub hit_rate: Option<f64>,
    pub mean_coverage: f64,
    pub max_cache_docs: usize,
    pub mean_hit_latency_ms: Option<f64>,
    pub mean_miss_latency_ms: Option<f64>,
    /// Total time if every query had cost the mean miss latency, over the
    /// measured total.
    pub speedup: Option<f64>,
    pub rank_metrics: Option<BTreeMap<String, f64>>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl Aggregates {
    pub fn from_rows(mode: Mode, rows: &[QueryRow], rank: Option<&RankMetrics>) -> Self {
        let mut by_conv: Vec<(&str, Vec<bool>)> = Vec::new();
        for r in rows {
            match by_conv.last_mut() {
                Some((c, hits)) if *c == r.conversation => hits.push(r.hit),
                _ => by_conv.push((r.conversation.as_str(), vec![r.hit])),
            }
        }
        let hits = rows.iter().filter(|r| r.hit).count();
        let hit_rate = match mode {
            Mode::None => None,
            _ => hit_rate(by_conv.iter().map(|(_, h)| h.iter().copied())).ok(),
        };
        let mean_hit = mean(rows.iter().filter(|r| r.hit).map(|r| r.latency_ms));
        let mean_miss = mean(rows.iter().filter(|r| !r.hit).map(|r| r.latency_ms));
        let total: f64 = rows.iter().map(|r| r.latency_ms).sum();
        let speedup = mean_miss
            .filter(|_| total > 0.0)
            .map(|m| m * rows.len() as f64 / total);
        Self {
            queries: rows.len(),
            conversations: by_conv.len(),
            hits,
            misses: rows.len() - hits,
            backend_calls: rows.iter().map(|r| r.backend_calls).sum(),
            hit_rate,
            mean_coverage: mean(rows.iter().map(|r| r.coverage)).unwrap_or(0.0),
            max_cache_docs: rows.iter().map(|r| r.cache_docs).max().unwrap_or(0),
            mean_hit_latency_ms: mean_hit,
            mean_miss_latency_ms: mean_miss,
            speedup,
            rank_metrics: rank.map(|m| m.mean.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub rows: Vec<QueryRow>,
    pub aggregates: Aggregates,
    #[serde(default)]
    pub rank_metrics: Option<RankMetrics>,
}

/// Replay output: the report plus the served results per TREC topic, in
/// replay order.
#[derive(Debug, Clone)]
pub struct Replay {
    pub report: RunReport,
    pub run: Vec<(String, ResultSet)>,
}

impl Replay {
    pub fn run_map(&self) -> Run {
        self.run
            .iter()
            .map(|(t, rs)| (t.clone(), rs.ids().map(str::to_owned).collect()))
            .collect()
    }
}

fn replay_conversation(
    config: &RunConfig,
    index: &DocumentStore,
    conv: &Conversation,
) -> Result<Vec<(QueryRow, ResultSet)>> {
    let extra = Duration::from_secs_f64(config.simulated_backend_latency_ms.unwrap_or(0.0) / 1e3);
    let mut cache = match config.mode.policy() {
        Some(p) => Some(MetricCache::new(config.cache_config(p))?),
        None => None,
    };
    let mut out = Vec::with_capacity(conv.turns.len());
    for turn in &conv.turns {
        let psi = lift_query(&turn.embedding)?;
        let start = Instant::now();
        let (results, hit, calls, quality) = match cache.as_mut() {
            None => (index.knn(&psi, config.k)?, false, 1, Default::default()),
            Some(c) => {
                let t = c.answer(index, &psi, config.k)?;
                (t.results, t.was_hit, t.backend_calls, t.quality)
            }
        };
        let mut elapsed = start.elapsed();
        if calls > 0 {
            elapsed += extra * calls as u32;
        }
        let coverage = match config.mode {
            Mode::None => 1.0,
            _ => coverage_clamped(&results, &index.knn(&psi, config.k)?, config.k),
        };
        out.push((
            QueryRow {
                conversation: conv.id.clone(),
                turn: turn.id.clone(),
                topic: conv.topic_id(turn),
                hit,
                backend_calls: calls,
                r_hat_best: quality.r_hat_best,
                r_hat_closest: quality.r_hat_closest,
                coverage,
                cache_docs: cache.as_ref().map_or(0, MetricCache::doc_count),
                latency_ms: elapsed.as_secs_f64() * 1e3,
            },
            results,
        ));
    }
    Ok(out)
}

fn replay_once(
    config: &RunConfig,
    index: &DocumentStore,
    conversations: &[Conversation],
) -> Result<Vec<Vec<(QueryRow, ResultSet)>>> {
    #[cfg(feature = "parallel")]
    if config.parallel {
        return conversations
            .par_iter()
            .map(|c| replay_conversation(config, index, c))
            .collect();
    }
    conversations
        .iter()
        .map(|c| replay_conversation(config, index, c))
        .collect()
}

/// Replays every conversation against its own fresh cache. Per-query
/// latencies are averaged over `repeats` passes.
///
/// Coverage is measured against an exact back-end top-`k` computed outside
/// the timed region. When `qrels` are given, rank metrics are computed on the
/// served results.
pub fn replay(
    config: &RunConfig,
    index: &DocumentStore,
    conversations: &[Conversation],
    qrels: Option<&Qrels>,
) -> Result<Replay> {
    config.validate()?;
    let mut per_conv = replay_once(config, index, conversations)?;
    // served results are deterministic; only latencies vary between repeats
    for _ in 1..config.repeats {
        let again = replay_once(config, index, conversations)?;
        for (a, b) in per_conv.iter_mut().flatten().zip(again.iter().flatten()) {
            a.0.latency_ms += b.0.latency_ms;
        }
    }
    if config.repeats > 1 {
        for (row, _) in per_conv.iter_mut().flatten() {
            row.latency_ms /= config.repeats as f64;
        }
    }

    let mut rows = Vec::new();
    let mut run = Vec::new();
    for (row, results) in per_conv.into_iter().flatten() {
        run.push((row.topic.clone(), results));
        rows.push(row);
    }
    let mut replay = Replay {
        report: RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config: config.clone(),
            aggregates: Aggregates::from_rows(config.mode, &rows, None),
            rows,
            rank_metrics: None,
        },
        run,
    };
    if let Some(qrels) = qrels {
        let metrics = rank_metrics(&replay.run_map(), qrels, &MetricCutoffs::default())?;
        replay.report.aggregates.rank_metrics = Some(metrics.mean.clone());
        replay.report.rank_metrics = Some(metrics);
    }
    Ok(replay)
}
