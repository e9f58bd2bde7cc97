//! Client-side caching of historical embeddings for conversational dense
//! retrieval.
//!
//! Embeddings are lifted onto the unit sphere so that maximum-inner-product
//! search becomes Euclidean nearest-neighbor search ([`geometry`]). An exact
//! flat index plays the back-end ([`flat_index`]), and a per-conversation
//! [`metric_cache`] answers follow-up queries locally whenever a cached
//! query ball safely covers them. [`evaluation`] and [`harness`] measure the
//! effect on retrieval quality and latency.

pub mod embf;
pub mod error;
pub mod evaluation;
pub mod flat_index;
pub mod geometry;
pub mod harness;
pub mod metric_cache;
mod topk;
pub mod trec;

pub use error::{Error, Result};
pub use flat_index::{DocumentStore, FetchedDocs, Neighbor, ResultSet};
pub use geometry::{
    collection_max_norm, distance, lift_document, lift_query, CollectionScale, RawEmbedding,
    TransformedEmbedding,
};
pub use metric_cache::{
    AnswerTrace, Backend, CacheConfig, CachePolicy, MetricCache, QualityEstimate, QualityRule,
    QueryBall,
};
pub use trec::{Qrels, Run};
