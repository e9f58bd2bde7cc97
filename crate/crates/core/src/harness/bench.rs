//! Latency measurements for back-end lookups and cache hits.
//!
//! Timings cover search and cache logic only; loading and lifting happen
//! before the clock starts. Back-end latency is measured on a batch holding
//! every turn of every conversation, averaged per query, and repeated
//! `repeats` times.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flat_index::DocumentStore;
use crate::geometry::{lift_query, TransformedEmbedding};
use crate::harness::data::Conversation;
use crate::metric_cache::{CacheConfig, CachePolicy, MetricCache, QualityRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub cache_cutoffs: Vec<usize>,
    pub k: usize,
    pub epsilon: f64,
    #[serde(default)]
    pub quality_rule: QualityRule,
    pub repeats: usize,
    pub simulated_latency_ms: Option<f64>,
    /// Run the back-end batch on the rayon pool.
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            cache_cutoffs: vec![1000, 2000, 5000, 10000],
            k: 3,
            epsilon: 0.04,
            quality_rule: QualityRule::AnyBall,
            repeats: 3,
            simulated_latency_ms: None,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub label: String,
    pub cache_cutoff: usize,
    /// Queries timed per run.
    pub queries: usize,
    /// Mean per-query latency of each run.
    pub per_run_ms: Vec<f64>,
    pub mean_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub policy: CachePolicy,
    pub cache_cutoff: usize,
    pub turns_per_conversation: f64,
    pub hit_rate: f64,
    pub miss_ms: f64,
    pub hit_ms: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyTable {
    pub config: BenchConfig,
    pub documents: usize,
    pub dim: usize,
    pub rows: Vec<LatencyRow>,
    /// Single-query back-end latency distribution per cache cutoff.
    pub backend_single_query: Vec<(usize, Percentiles)>,
    pub speedup: Vec<SpeedupRow>,
}

impl LatencyTable {
    pub fn row(&self, label: &str, cache_cutoff: usize) -> Option<&LatencyRow> {
        self.rows
            .iter()
            .find(|r| r.label == label && r.cache_cutoff == cache_cutoff)
    }
}

/// Wall-clock time of a conversation with `misses` back-end lookups and
/// `hits` cache answers.
pub fn conversation_time(misses: f64, hits: f64, miss_cost: f64, hit_cost: f64) -> f64 {
    misses * miss_cost + hits * hit_cost
}

/// Speedup over always querying the back-end for a conversation of `turns`
/// queries: the first is a compulsory miss, the remaining `turns - 1` hit
/// with probability `hit_rate`.
pub fn conversation_speedup(turns: f64, hit_rate: f64, miss_cost: f64, hit_cost: f64) -> f64 {
    let later = turns - 1.0;
    let hits = later * hit_rate;
    let misses = 1.0 + later - hits;
    turns * miss_cost / conversation_time(misses, hits, miss_cost, hit_cost)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

struct HitTimes {
    per_run_ms: Vec<f64>,
    queries: usize,
    hit_rate: f64,
}

fn time_hits(
    index: &DocumentStore,
    lifted: &[Vec<TransformedEmbedding>],
    config: CacheConfig,
    k: usize,
    repeats: usize,
) -> Result<HitTimes> {
    let mut per_run = Vec::with_capacity(repeats);
    let mut queries = 0;
    let mut hit_rate = 0.0;
    for _ in 0..repeats {
        let mut hit_ms = Vec::new();
        let mut eligible = 0usize;
        for conv in lifted {
            let mut cache = MetricCache::new(config.clone())?;
            for (i, psi) in conv.iter().enumerate() {
                let start = Instant::now();
                let trace = cache.answer(index, psi, k)?;
                let ms = start.elapsed().as_secs_f64() * 1e3;
                if i > 0 {
                    eligible += 1;
                }
                if trace.was_hit {
                    hit_ms.push(ms);
                }
            }
        }
        queries = hit_ms.len();
        hit_rate = if eligible > 0 {
            hit_ms.len() as f64 / eligible as f64
        } else {
            0.0
        };
        per_run.push(mean(&hit_ms));
    }
    Ok(HitTimes {
        per_run_ms: per_run,
        queries,
        hit_rate,
    })
}

/// Measures back-end batch latency and static/dynamic cache-hit latency at
/// every configured cache cutoff.
pub fn bench(
    config: &BenchConfig,
    index: &DocumentStore,
    conversations: &[Conversation],
) -> Result<LatencyTable> {
    if config.repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be at least 1".into()));
    }
    if config.cache_cutoffs.is_empty() || config.cache_cutoffs.contains(&0) {
        return Err(Error::InvalidParameter(
            "cache cutoffs must be positive".into(),
        ));
    }
    if config.cache_cutoffs.iter().any(|&kc| kc < config.k) || config.k == 0 {
        return Err(Error::InvalidParameter(
            "need 1 <= k <= every cache cutoff".into(),
        ));
    }
    let extra_ms = config.simulated_latency_ms.unwrap_or(0.0);
    let lifted: Vec<Vec<TransformedEmbedding>> = conversations
        .iter()
        .map(|c| c.turns.iter().map(|t| lift_query(&t.embedding)).collect())
        .collect::<Result<_>>()?;
    let batch: Vec<TransformedEmbedding> = lifted.iter().flatten().cloned().collect();
    if batch.is_empty() {
        return Err(Error::InvalidParameter("no queries to benchmark".into()));
    }
    let turns_per_conv = batch.len() as f64 / lifted.len() as f64;

    let mut rows = Vec::new();
    let mut single = Vec::new();
    let mut speedup = Vec::new();
    for &kc in &config.cache_cutoffs {
        let mut per_run = Vec::with_capacity(config.repeats);
        for _ in 0..config.repeats {
            let start = Instant::now();
            let out = if config.parallel {
                index.batch_knn(&batch, kc)?
            } else {
                index.batch_knn_sequential(&batch, kc)?
            };
            let ms = start.elapsed().as_secs_f64() * 1e3;
            std::hint::black_box(out);
            per_run.push(ms / batch.len() as f64 + extra_ms);
        }
        let miss_ms = mean(&per_run);
        rows.push(LatencyRow {
            label: "backend".into(),
            cache_cutoff: kc,
            queries: batch.len(),
            mean_ms: miss_ms,
            per_run_ms: per_run,
        });

        let mut samples: Vec<f64> = batch
            .iter()
            .map(|q| {
                let start = Instant::now();
                let r = index.knn(q, kc);
                let ms = start.elapsed().as_secs_f64() * 1e3;
                r.map(|_| ms + extra_ms)
            })
            .collect::<Result<_>>()?;
        samples.sort_by(f64::total_cmp);
        single.push((
            kc,
            Percentiles {
                p50_ms: percentile(&samples, 0.5),
                p90_ms: percentile(&samples, 0.9),
                p99_ms: percentile(&samples, 0.99),
            },
        ));

        for (policy, label) in [
            (CachePolicy::Static, "static_hit"),
            (CachePolicy::Dynamic, "dynamic_hit"),
        ] {
            let cache_config = CacheConfig {
                policy,
                epsilon: config.epsilon,
                cache_cutoff: kc,
                quality_rule: config.quality_rule,
                max_docs: None,
            };
            let hits = time_hits(index, &lifted, cache_config, config.k, config.repeats)?;
            let hit_ms = mean(&hits.per_run_ms);
            rows.push(LatencyRow {
                label: label.into(),
                cache_cutoff: kc,
                queries: hits.queries,
                per_run_ms: hits.per_run_ms,
                mean_ms: hit_ms,
            });
            speedup.push(SpeedupRow {
                policy,
                cache_cutoff: kc,
                turns_per_conversation: turns_per_conv,
                hit_rate: hits.hit_rate,
                miss_ms,
                hit_ms,
                speedup: conversation_speedup(turns_per_conv, hits.hit_rate, miss_ms, hit_ms),
            });
        }
    }
    Ok(LatencyTable {
        config: config.clone(),
        documents: index.len(),
        dim: index.dim(),
        rows,
        backend_single_query: single,
        speedup,
    })
}
