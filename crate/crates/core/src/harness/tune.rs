use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evaluation::{tune_epsilon, TunePoint};
use crate::flat_index::DocumentStore;
use crate::harness::data::Conversation;
use crate::harness::replay::{replay, Mode, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub epsilon: f64,
    pub coverage_floor: f64,
    pub outliers: usize,
    pub k: usize,
    pub cache_cutoff: usize,
    pub points: Vec<TunePoint>,
}

/// Safe radius versus coverage for every non-first turn, measured against a
/// static cache filled by each conversation's first query.
pub fn collect_tune_points(
    index: &DocumentStore,
    conversations: &[Conversation],
    k: usize,
    cache_cutoff: usize,
) -> Result<Vec<TunePoint>> {
    let config = RunConfig {
        mode: Mode::Static,
        k,
        cache_cutoff,
        epsilon: 0.0,
        repeats: 1,
        ..RunConfig::default()
    };
    let rep = replay(&config, index, conversations, None)?;
    Ok(rep
        .report
        .rows
        .into_iter()
        .filter_map(|row| {
            row.r_hat_best.map(|r_hat| TunePoint {
                query_id: row.topic,
                r_hat,
                coverage: row.coverage,
            })
        })
        .collect())
}

/// Collects tuning points on a training split and derives the threshold.
pub fn tune_on(
    index: &DocumentStore,
    train: &[Conversation],
    k: usize,
    cache_cutoff: usize,
    coverage_floor: f64,
    outliers: usize,
) -> Result<TuneOutcome> {
    let points = collect_tune_points(index, train, k, cache_cutoff)?;
    let epsilon = tune_epsilon(&points, coverage_floor, outliers)?;
    Ok(TuneOutcome {
        epsilon,
        coverage_floor,
        outliers,
        k,
        cache_cutoff,
        points,
    })
}
