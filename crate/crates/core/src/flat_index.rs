//! Exact, exhaustive nearest-neighbor search over lifted document embeddings.
//!
//! Rows are kept contiguous (`f32`, row-major) and sorted by document id, so
//! the row position doubles as the tie-break key: equal distances resolve to
//! the lexicographically smaller id regardless of insertion order.

use std::collections::HashMap;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    collection_max_norm, lift_document, squared_distance_mixed, CollectionScale, RawEmbedding,
    TransformedEmbedding,
};
use crate::topk::TopK;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub distance: f64,
}

/// Ranked neighbors, ascending by `(distance, id)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    pub entries: Vec<Neighbor>,
}

impl ResultSet {
    pub fn new(entries: Vec<Neighbor>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|n| n.id.as_str())
    }

    /// Distance of the furthest entry: the radius of the ball this result
    /// set carves out around its query.
    pub fn radius(&self) -> Result<f64> {
        self.entries
            .last()
            .map(|n| n.distance)
            .ok_or(Error::EmptyResultSet)
    }

    pub fn truncated(&self, k: usize) -> ResultSet {
        ResultSet::new(self.entries.iter().take(k).cloned().collect())
    }

    /// Checks the ordering and uniqueness invariants.
    pub fn is_well_formed(&self) -> bool {
        let sorted = self.entries.windows(2).all(|w| {
            w[0].distance
                .total_cmp(&w[1].distance)
                .then_with(|| w[0].id.cmp(&w[1].id))
                .is_lt()
        });
        let mut ids: Vec<&str> = self.ids().collect();
        ids.sort_unstable();
        ids.dedup();
        sorted && ids.len() == self.entries.len()
    }
}

pub fn radius_of(result: &ResultSet) -> Result<f64> {
    result.radius()
}

/// Results of a back-end call together with the embeddings the client needs
/// to populate its cache. `vectors` is row-major and parallel to `results`.
#[derive(Debug, Clone)]
pub struct FetchedDocs {
    pub results: ResultSet,
    pub vectors: Vec<f32>,
    pub dim: usize,
}

impl FetchedDocs {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

/// The full collection of lifted document embeddings.
#[derive(Debug, Clone)]
pub struct DocumentStore {
    ids: Vec<String>,
    vectors: Vec<f32>,
    dim: usize,
    scale: CollectionScale,
    position: HashMap<String, u32>,
}

impl DocumentStore {
    /// Computes `M` over the collection, lifts every document and lays the
    /// rows out sorted by id.
    pub fn build<I>(raw_docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, RawEmbedding)>,
    {
        let mut docs: Vec<(String, RawEmbedding)> = raw_docs.into_iter().collect();
        if docs.is_empty() {
            return Err(Error::EmptyCollection);
        }
        docs.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = docs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateId(w[0].0.clone()));
        }
        let scale = collection_max_norm(docs.iter().map(|(_, e)| e))?;
        let dim = docs[0].1.dim() + 1;
        let mut ids = Vec::with_capacity(docs.len());
        let mut vectors = Vec::with_capacity(docs.len() * dim);
        for (id, raw) in docs {
            let lifted = lift_document(&raw, scale)?;
            vectors.extend(lifted.as_slice().iter().map(|&v| v as f32));
            ids.push(id);
        }
        Self::assemble(ids, vectors, dim, scale)
    }

    /// Builds a store from rows that are already lifted (e.g. read from disk).
    /// Rows are re-sorted by id if needed.
    pub fn from_lifted(
        ids: Vec<String>,
        vectors: Vec<f32>,
        dim: usize,
        scale: CollectionScale,
    ) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyCollection);
        }
        if dim == 0 || vectors.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                found: vectors.len(),
            });
        }
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos % dim));
        }
        if ids.windows(2).all(|w| w[0] < w[1]) {
            return Self::assemble(ids, vectors, dim, scale);
        }
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
        if let Some(w) = order.windows(2).find(|w| ids[w[0]] == ids[w[1]]) {
            return Err(Error::DuplicateId(ids[w[0]].clone()));
        }
        let mut sorted_ids = Vec::with_capacity(ids.len());
        let mut sorted_vecs = Vec::with_capacity(vectors.len());
        for &i in &order {
            sorted_ids.push(ids[i].clone());
            sorted_vecs.extend_from_slice(&vectors[i * dim..(i + 1) * dim]);
        }
        Self::assemble(sorted_ids, sorted_vecs, dim, scale)
    }

    fn assemble(
        ids: Vec<String>,
        vectors: Vec<f32>,
        dim: usize,
        scale: CollectionScale,
    ) -> Result<Self> {
        if ids.len() > u32::MAX as usize {
            return Err(Error::InvalidParameter("too many documents".into()));
        }
        let position = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        Ok(Self {
            ids,
            vectors,
            dim,
            scale,
            position,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Dimension of the lifted rows (`l + 1`).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> CollectionScale {
        self.scale
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn row(&self, pos: usize) -> &[f32] {
        &self.vectors[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.position.get(id).map(|&p| self.row(p as usize))
    }

    /// Bytes taken by the embedding rows alone.
    pub fn embedding_bytes(&self) -> usize {
        self.vectors.len() * std::mem::size_of::<f32>()
    }

    fn check_query(&self, query: &TransformedEmbedding, k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        Ok(())
    }

    fn scan(&self, query: &[f64], k: usize, rows: std::ops::Range<usize>) -> TopK<u32> {
        let mut top = TopK::new(k);
        let start = rows.start;
        let chunk = &self.vectors[rows.start * self.dim..rows.end * self.dim];
        for (offset, row) in chunk.chunks_exact(self.dim).enumerate() {
            let d2 = squared_distance_mixed(query, row);
            top.push(d2, (start + offset) as u32);
        }
        top
    }

    fn to_result(&self, cands: Vec<crate::topk::Candidate<u32>>) -> (ResultSet, Vec<u32>) {
        let mut positions = Vec::with_capacity(cands.len());
        let entries = cands
            .into_iter()
            .map(|c| {
                positions.push(c.key);
                Neighbor {
                    id: self.ids[c.key as usize].clone(),
                    distance: c.distance.sqrt(),
                }
            })
            .collect();
        (ResultSet::new(entries), positions)
    }

    /// The `min(k, n)` documents closest to `query`.
    pub fn knn(&self, query: &TransformedEmbedding, k: usize) -> Result<ResultSet> {
        self.check_query(query, k)?;
        let top = self.scan(query.as_slice(), k, 0..self.len());
        Ok(self.to_result(top.into_sorted_vec()).0)
    }

    /// Same contract as [`knn`](Self::knn), with the scan split across the
    /// rayon pool.
    #[cfg(feature = "parallel")]
    pub fn knn_parallel(&self, query: &TransformedEmbedding, k: usize) -> Result<ResultSet> {
        self.check_query(query, k)?;
        const CHUNK_ROWS: usize = 8192;
        let n = self.len();
        let parts: Vec<_> = (0..n.div_ceil(CHUNK_ROWS))
            .into_par_iter()
            .map(|c| {
                let rows = c * CHUNK_ROWS..((c + 1) * CHUNK_ROWS).min(n);
                self.scan(query.as_slice(), k, rows).into_sorted_vec()
            })
            .collect();
        Ok(self.to_result(crate::topk::merge(parts, k)).0)
    }

    /// k-NN that also hands back the embeddings of the retrieved rows, which
    /// is what a client-side cache needs from the back-end.
    pub fn fetch(&self, query: &TransformedEmbedding, k: usize) -> Result<FetchedDocs> {
        self.check_query(query, k)?;
        let top = self.scan(query.as_slice(), k, 0..self.len());
        let (results, positions) = self.to_result(top.into_sorted_vec());
        let mut vectors = Vec::with_capacity(positions.len() * self.dim);
        for p in positions {
            vectors.extend_from_slice(self.row(p as usize));
        }
        Ok(FetchedDocs {
            results,
            vectors,
            dim: self.dim,
        })
    }

    pub fn batch_knn_sequential(
        &self,
        queries: &[TransformedEmbedding],
        k: usize,
    ) -> Result<Vec<ResultSet>> {
        queries.iter().map(|q| self.knn(q, k)).collect()
    }

    #[cfg(feature = "parallel")]
    pub fn batch_knn_parallel(
        &self,
        queries: &[TransformedEmbedding],
        k: usize,
    ) -> Result<Vec<ResultSet>> {
        queries.par_iter().map(|q| self.knn(q, k)).collect()
    }

    /// Per-query k-NN over a batch; output order follows input order. Runs on
    /// the rayon pool when the `parallel` feature is on.
    pub fn batch_knn(&self, queries: &[TransformedEmbedding], k: usize) -> Result<Vec<ResultSet>> {
        #[cfg(feature = "parallel")]
        {
            self.batch_knn_parallel(queries, k)
        }
        #[cfg(not(feature = "parallel"))]
        {
            self.batch_knn_sequential(queries, k)
        }
    }
}
