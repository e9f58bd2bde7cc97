//! Client-side metric cache for one conversation.
//!
//! The cache keeps every document embedding it ever fetched from the back-end
//! plus, for each back-end request, the ball `(center, radius)` spanned by the
//! query and its furthest fetched document. For a new query `psi`, each ball
//! yields a safe radius `r_hat = radius - dist(center, psi)`: when positive,
//! every collection document within `r_hat` of `psi` is already cached. The
//! query is served from the cache when `r_hat >= epsilon` (see
//! [`QualityRule`] for which balls are considered); otherwise `k_c` fresh
//! neighbors are fetched and a new ball is recorded.
//!
//! There is no eviction. A hard cap on the number of cached documents can be
//! configured, and exceeding it is an error.

use std::collections::HashMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flat_index::{DocumentStore, FetchedDocs, Neighbor, ResultSet};
use crate::geometry::{squared_distance_f64, squared_distance_mixed, TransformedEmbedding};
use crate::topk::TopK;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CachePolicy {
    /// Filled by the first query of the conversation, never updated.
    Static,
    /// Refilled whenever the quality test fails.
    Dynamic,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityRule {
    /// Hit if *some* ball gives `r_hat >= epsilon`.
    #[default]
    AnyBall,
    /// Hit if the ball whose center is closest to the query gives
    /// `r_hat >= epsilon`.
    ClosestBall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub policy: CachePolicy,
    pub epsilon: f64,
    pub cache_cutoff: usize,
    #[serde(default)]
    pub quality_rule: QualityRule,
    #[serde(default)]
    pub max_docs: Option<usize>,
}

impl CacheConfig {
    pub fn new(policy: CachePolicy, epsilon: f64, cache_cutoff: usize) -> Self {
        Self {
            policy,
            epsilon,
            cache_cutoff,
            quality_rule: QualityRule::AnyBall,
            max_docs: None,
        }
    }

    pub fn with_quality_rule(mut self, rule: QualityRule) -> Self {
        self.quality_rule = rule;
        self
    }

    pub fn with_max_docs(mut self, cap: usize) -> Self {
        self.max_docs = Some(cap);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if self.cache_cutoff == 0 {
            return Err(Error::InvalidParameter("cache cutoff must be >= 1".into()));
        }
        if self.max_docs == Some(0) {
            return Err(Error::InvalidParameter("max_docs must be >= 1".into()));
        }
        Ok(())
    }
}

/// A back-end answered query: the center and radius of its ball.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBall {
    pub center: TransformedEmbedding,
    pub radius: f64,
}

impl QueryBall {
    pub fn safe_radius(&self, query: &TransformedEmbedding) -> f64 {
        self.radius - squared_distance_f64(self.center.as_slice(), query.as_slice()).sqrt()
    }
}

/// Outcome of the quality estimate for one query.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QualityEstimate {
    /// Largest `r_hat` over all balls.
    pub r_hat_best: Option<f64>,
    /// `r_hat` of the ball whose center is closest to the query.
    pub r_hat_closest: Option<f64>,
}

impl QualityEstimate {
    pub fn for_rule(&self, rule: QualityRule) -> Option<f64> {
        match rule {
            QualityRule::AnyBall => self.r_hat_best,
            QualityRule::ClosestBall => self.r_hat_closest,
        }
    }
}

/// Where a back-end lookup is served from.
pub trait Backend {
    fn dim(&self) -> usize;
    fn fetch(&self, query: &TransformedEmbedding, k: usize) -> Result<FetchedDocs>;
}

impl Backend for DocumentStore {
    fn dim(&self) -> usize {
        DocumentStore::dim(self)
    }

    fn fetch(&self, query: &TransformedEmbedding, k: usize) -> Result<FetchedDocs> {
        DocumentStore::fetch(self, query, k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnswerTrace {
    pub results: ResultSet,
    pub was_hit: bool,
    pub backend_calls: usize,
    pub quality: QualityEstimate,
}

#[derive(Debug, Clone)]
pub struct MetricCache {
    config: CacheConfig,
    dim: Option<usize>,
    ids: Vec<String>,
    vectors: Vec<f32>,
    slot: HashMap<String, usize>,
    balls: Vec<QueryBall>,
}

impl MetricCache {
    pub fn new(config: CacheConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            dim: None,
            ids: Vec::new(),
            vectors: Vec::new(),
            slot: HashMap::new(),
            balls: Vec::new(),
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty() && self.ids.is_empty()
    }

    pub fn doc_count(&self) -> usize {
        self.ids.len()
    }

    pub fn balls(&self) -> &[QueryBall] {
        &self.balls
    }

    pub fn contains(&self, id: &str) -> bool {
        self.slot.contains_key(id)
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.ids
    }

    /// Bytes taken by cached embedding rows.
    pub fn embedding_bytes(&self) -> usize {
        self.vectors.len() * std::mem::size_of::<f32>()
    }

    /// Safe radii of `query` against the recorded balls.
    pub fn quality(&self, query: &TransformedEmbedding) -> QualityEstimate {
        let mut best: Option<f64> = None;
        let mut closest: Option<(f64, f64)> = None;
        for ball in &self.balls {
            let d = squared_distance_f64(ball.center.as_slice(), query.as_slice()).sqrt();
            let r_hat = ball.radius - d;
            best = Some(best.map_or(r_hat, |b| b.max(r_hat)));
            match closest {
                Some((cd, _)) if cd <= d => {}
                _ => closest = Some((d, r_hat)),
            }
        }
        QualityEstimate {
            r_hat_best: best,
            r_hat_closest: closest.map(|(_, r)| r),
        }
    }

    /// `true` when the cached contents are judged unfit for `query`. An empty
    /// cache is always low quality.
    pub fn low_quality(&self, query: &TransformedEmbedding) -> bool {
        match self.quality(query).for_rule(self.config.quality_rule) {
            None => true,
            Some(r_hat) => r_hat < self.config.epsilon,
        }
    }

    /// Adds fetched documents (deduplicated by id) and records the ball
    /// `(center, radius of fetched)`.
    pub fn insert(&mut self, fetched: &FetchedDocs, center: &TransformedEmbedding) -> Result<()> {
        let radius = fetched.results.radius()?;
        if center.dim() != fetched.dim {
            return Err(Error::DimensionMismatch {
                expected: fetched.dim,
                found: center.dim(),
            });
        }
        match self.dim {
            Some(d) if d != fetched.dim => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: fetched.dim,
                })
            }
            _ => self.dim = Some(fetched.dim),
        }
        if let Some(cap) = self.config.max_docs {
            let fresh = fetched
                .results
                .ids()
                .filter(|id| !self.slot.contains_key(*id))
                .count();
            if self.ids.len() + fresh > cap {
                return Err(Error::CacheCapacityExceeded {
                    requested: self.ids.len() + fresh,
                    cap,
                });
            }
        }
        for (i, n) in fetched.results.entries.iter().enumerate() {
            if self.slot.contains_key(&n.id) {
                continue;
            }
            self.slot.insert(n.id.clone(), self.ids.len());
            self.ids.push(n.id.clone());
            self.vectors.extend_from_slice(fetched.row(i));
        }
        self.balls.push(QueryBall {
            center: center.clone(),
            radius,
        });
        Ok(())
    }

    /// Exact k-NN restricted to the cached documents.
    pub fn knn(&self, query: &TransformedEmbedding, k: usize) -> Result<ResultSet> {
        let dim = match self.dim {
            Some(d) if !self.ids.is_empty() => d,
            _ => return Err(Error::EmptyCache),
        };
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if query.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: query.dim(),
            });
        }
        let mut top = TopK::new(k);
        for (slot, row) in self.vectors.chunks_exact(dim).enumerate() {
            let d2 = squared_distance_mixed(query.as_slice(), row);
            top.push(d2, self.ids[slot].as_str());
        }
        let entries = top
            .into_sorted_vec()
            .into_iter()
            .map(|c| Neighbor {
                id: c.key.to_owned(),
                distance: c.distance.sqrt(),
            })
            .collect();
        Ok(ResultSet::new(entries))
    }

    /// Answers one conversational query.
    ///
    /// The back-end is contacted when the cache is empty, or when the policy is
    /// dynamic and the quality test fails. The answer itself always comes from
    /// the cache.
    pub fn answer<B: Backend + ?Sized>(
        &mut self,
        backend: &B,
        query: &TransformedEmbedding,
        k: usize,
    ) -> Result<AnswerTrace> {
        if k == 0 || k > self.config.cache_cutoff {
            return Err(Error::InvalidParameter(format!(
                "query cutoff {k} must be in 1..={}",
                self.config.cache_cutoff
            )));
        }
        let quality = self.quality(query);
        let empty = self.balls.is_empty();
        let refresh = empty
            || (self.config.policy == CachePolicy::Dynamic
                && quality
                    .for_rule(self.config.quality_rule)
                    .is_none_or(|r| r < self.config.epsilon));
        let mut backend_calls = 0;
        if refresh {
            let fetched = backend.fetch(query, self.config.cache_cutoff)?;
            backend_calls = 1;
            self.insert(&fetched, query)?;
        }
        let results = self.knn(query, k)?;
        if results.len() < k {
            warn!(
                "cache holds {} documents, short answer for k = {k}",
                self.ids.len()
            );
        }
        Ok(AnswerTrace {
            results,
            was_hit: !refresh,
            backend_calls,
            quality,
        })
    }

    /// Drops all documents and balls; parameters are kept.
    pub fn reset(&mut self) {
        self.dim = None;
        self.ids.clear();
        self.vectors.clear();
        self.slot.clear();
        self.balls.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{lift_query, RawEmbedding};

    fn unit(v: &[f64]) -> TransformedEmbedding {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        TransformedEmbedding::from_lifted(v.iter().map(|x| x / n).collect()).unwrap()
    }

    /// Point on the unit circle (lifted dim 3, last coordinate 0) at `angle`.
    fn at(angle: f64) -> TransformedEmbedding {
        unit(&[angle.cos(), angle.sin(), 0.0])
    }

    /// Angle whose chord from angle 0 has the given length.
    fn angle_for_chord(chord: f64) -> f64 {
        2.0 * (chord / 2.0).asin()
    }

    fn ball(radius: f64) -> QueryBall {
        QueryBall {
            center: at(0.0),
            radius,
        }
    }

    fn dyn_cache(eps: f64, kc: usize) -> MetricCache {
        MetricCache::new(CacheConfig::new(CachePolicy::Dynamic, eps, kc)).unwrap()
    }

    #[test]
    fn new_cache_parameters() {
        for (p, e, kc) in [
            (CachePolicy::Dynamic, 0.04, 1000),
            (CachePolicy::Dynamic, 0.07, 10000),
            (CachePolicy::Static, 0.0, 1),
        ] {
            let c = MetricCache::new(CacheConfig::new(p, e, kc)).unwrap();
            assert!(c.is_empty());
            assert_eq!(c.doc_count(), 0);
        }
        assert!(MetricCache::new(CacheConfig::new(CachePolicy::Static, -0.1, 10)).is_err());
        assert!(MetricCache::new(CacheConfig::new(CachePolicy::Static, 0.1, 0)).is_err());
        assert!(MetricCache::new(CacheConfig::new(CachePolicy::Static, f64::NAN, 1)).is_err());
    }

    #[test]
    fn low_quality_examples() {
        let mut c = dyn_cache(0.04, 10);
        assert!(c.low_quality(&at(0.3)));
        c.balls.push(ball(0.50));

        let near = at(angle_for_chord(0.30));
        let q = c.quality(&near);
        assert!((q.r_hat_best.unwrap() - 0.20).abs() < 1e-12);
        assert!(!c.low_quality(&near));

        let edge = at(angle_for_chord(0.48));
        assert!((c.quality(&edge).r_hat_best.unwrap() - 0.02).abs() < 1e-12);
        assert!(c.low_quality(&edge));
    }

    #[test]
    fn boundary_counts_as_hit() {
        let mut c = dyn_cache(0.0, 10);
        c.balls.push(QueryBall {
            center: at(0.0),
            radius: 0.0,
        });
        assert!(!c.low_quality(&at(0.0)));
    }

    #[test]
    fn any_ball_versus_closest_ball() {
        // Closest center has a tiny ball; a farther center has a large one.
        let mut c = dyn_cache(0.04, 10);
        c.balls.push(QueryBall {
            center: at(0.1),
            radius: 0.01,
        });
        c.balls.push(QueryBall {
            center: at(-0.3),
            radius: 0.9,
        });
        let q = at(0.12);
        let est = c.quality(&q);
        assert!(est.r_hat_closest.unwrap() < 0.0);
        assert!(est.r_hat_best.unwrap() > 0.04);
        assert!(!c.low_quality(&q));
        c.config.quality_rule = QualityRule::ClosestBall;
        assert!(c.low_quality(&q));
    }

    fn circle_store(n: usize) -> DocumentStore {
        let docs = (0..n).map(|i| {
            let a = i as f64 * std::f64::consts::TAU / n as f64;
            (
                format!("d{i:04}"),
                RawEmbedding::new(vec![a.cos() as f32, a.sin() as f32]).unwrap(),
            )
        });
        DocumentStore::build(docs).unwrap()
    }

    fn q(angle: f64) -> TransformedEmbedding {
        lift_query(&RawEmbedding::new(vec![angle.cos() as f32, angle.sin() as f32]).unwrap())
            .unwrap()
    }

    #[test]
    fn insert_deduplicates_and_records_ball() {
        let store = circle_store(100);
        let mut c = dyn_cache(0.04, 10);
        let f1 = store.fetch(&q(0.0), 10).unwrap();
        c.insert(&f1, &q(0.0)).unwrap();
        assert_eq!((c.doc_count(), c.balls().len()), (10, 1));
        assert_eq!(c.balls()[0].radius, f1.results.radius().unwrap());
        // Shift by four slots: six of the ten are already cached.
        let shift = 4.0 * std::f64::consts::TAU / 100.0;
        let f2 = store.fetch(&q(shift), 10).unwrap();
        let overlap = f2.results.ids().filter(|id| c.contains(id)).count();
        c.insert(&f2, &q(shift)).unwrap();
        assert_eq!(c.doc_count(), 10 + (10 - overlap));
        assert_eq!(c.balls().len(), 2);
    }

    #[test]
    fn insert_respects_cap() {
        let store = circle_store(100);
        let mut c =
            MetricCache::new(CacheConfig::new(CachePolicy::Dynamic, 0.0, 10).with_max_docs(15))
                .unwrap();
        c.insert(&store.fetch(&q(0.0), 10).unwrap(), &q(0.0))
            .unwrap();
        let far = store.fetch(&q(3.0), 10).unwrap();
        assert!(matches!(
            c.insert(&far, &q(3.0)),
            Err(Error::CacheCapacityExceeded { cap: 15, .. })
        ));
        assert_eq!(c.doc_count(), 10);
    }

    #[test]
    fn cache_knn_examples() {
        let store = circle_store(50);
        let mut c = dyn_cache(0.0, 50);
        assert!(matches!(c.knn(&q(0.0), 3), Err(Error::EmptyCache)));
        c.insert(&store.fetch(&q(0.0), 50).unwrap(), &q(0.0))
            .unwrap();
        for a in [0.0, 0.7, 2.0, 4.5] {
            assert_eq!(c.knn(&q(a), 7).unwrap(), store.knn(&q(a), 7).unwrap());
        }
        let mut small = dyn_cache(0.0, 3);
        small
            .insert(&store.fetch(&q(0.0), 3).unwrap(), &q(0.0))
            .unwrap();
        assert_eq!(small.knn(&q(1.0), 10).unwrap().len(), 3);
    }

    #[test]
    fn first_query_misses_then_static_always_hits() {
        let store = circle_store(200);
        let mut c = MetricCache::new(CacheConfig::new(CachePolicy::Static, 0.04, 20)).unwrap();
        let t = c.answer(&store, &q(0.0), 5).unwrap();
        assert!(!t.was_hit);
        assert_eq!(t.backend_calls, 1);
        assert_eq!(c.doc_count(), 20);
        // Opposite side of the circle: still a hit for a static cache.
        let t = c.answer(&store, &q(3.1), 5).unwrap();
        assert!(t.was_hit);
        assert_eq!(t.backend_calls, 0);
        assert_eq!(c.balls().len(), 1);
        assert!(t.quality.r_hat_best.unwrap() < 0.0);
    }

    #[test]
    fn dynamic_misses_on_topic_shift() {
        let store = circle_store(200);
        let mut c = dyn_cache(0.04, 20);
        let slot = std::f64::consts::TAU / 200.0;
        // 20 neighbours of angle 0 span +-10 slots; radius ~ 10 slots.
        let seq = [0.0, slot, -slot, 3.0, 3.0 + slot];
        let hits: Vec<bool> = seq
            .iter()
            .map(|&a| c.answer(&store, &q(a), 5).unwrap().was_hit)
            .collect();
        assert_eq!(hits, vec![false, true, true, false, true]);
        assert_eq!(c.balls().len(), 2);
    }

    #[test]
    fn answer_rejects_k_above_cutoff() {
        let store = circle_store(10);
        let mut c = dyn_cache(0.0, 3);
        assert!(c.answer(&store, &q(0.0), 4).is_err());
    }

    #[test]
    fn reset_clears_state() {
        let store = circle_store(30);
        let mut c = dyn_cache(0.04, 10);
        c.answer(&store, &q(0.0), 3).unwrap();
        c.reset();
        assert!(c.is_empty());
        assert_eq!((c.doc_count(), c.balls().len()), (0, 0));
        c.reset();
        assert!(c.is_empty());
        assert_eq!(c.config().cache_cutoff, 10);
        assert!(!c.answer(&store, &q(1.0), 3).unwrap().was_hit);
    }
}
