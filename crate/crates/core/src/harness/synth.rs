//! Seeded synthetic collections with clustered conversational queries.
//!
//! Each topic is a point on the unit sphere; its documents and queries are the
//! center plus isotropic Gaussian noise, renormalized. A conversation walks
//! through every topic in turn, spending `turns_per_topic` queries on each,
//! so the number of topic shifts per conversation is `topics - 1`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RawEmbedding;
use crate::harness::data::{write_conversations_jsonl, write_embeddings_jsonl, Conversation, Turn};
use crate::trec::Qrels;

/// Number of documents per topic, closest to the center, judged grade 2.
pub const TOP_GRADE_DOCS: usize = 10;

const MAX_CENTER_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub topics: usize,
    pub turns_per_topic: usize,
    pub docs_per_topic: usize,
    pub dim: usize,
    /// Per-coordinate noise of documents around their topic center.
    pub sigma: f64,
    /// Per-coordinate noise of queries; defaults to `sigma / 2`.
    pub query_sigma: Option<f64>,
    /// Minimum pairwise distance between topic centers.
    pub separation: f64,
    pub conversations: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            topics: 3,
            turns_per_topic: 5,
            docs_per_topic: 200,
            dim: 8,
            sigma: 0.05,
            query_sigma: None,
            separation: 1.0,
            conversations: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.topics == 0 || self.turns_per_topic == 0 || self.docs_per_topic == 0 {
            return bad("topics, turns and docs per topic must be positive");
        }
        if self.conversations == 0 {
            return bad("need at least one conversation");
        }
        if self.dim < 2 {
            return bad("dimension must be at least 2");
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        if let Some(q) = self.query_sigma {
            if !(q.is_finite() && q >= 0.0) {
                return bad("query sigma must be non-negative");
            }
        }
        if !(0.0..=2.0).contains(&self.separation) {
            return bad("separation must lie in [0, 2]");
        }
        Ok(())
    }

    pub fn query_noise(&self) -> f64 {
        self.query_sigma.unwrap_or(self.sigma / 2.0)
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub docs: Vec<(String, RawEmbedding)>,
    pub conversations: Vec<Conversation>,
    pub qrels: Qrels,
    pub centers: Vec<Vec<f64>>,
    /// Topic index of every turn, parallel to `conversations`.
    pub turn_topics: Vec<Vec<usize>>,
}

impl SynthData {
    /// Writes `docs.jsonl`, `conversations.jsonl` and `qrels.txt`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_embeddings_jsonl(
            dir.join("docs.jsonl"),
            self.docs.iter().map(|(id, e)| (id.as_str(), e)),
        )?;
        write_conversations_jsonl(dir.join("conversations.jsonl"), &self.conversations)?;
        self.qrels.write(std::io::BufWriter::new(fs::File::create(
            dir.join("qrels.txt"),
        )?))?;
        Ok(())
    }

    /// Number of topic changes within conversation `c`.
    pub fn topic_shifts(&self, c: usize) -> usize {
        self.turn_topics[c]
            .windows(2)
            .filter(|w| w[0] != w[1])
            .count()
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn perturb(rng: &mut ChaCha8Rng, center: &[f64], sigma: f64) -> Vec<f64> {
    // redraw on the (measure-zero) chance of landing on the origin
    loop {
        let mut v: Vec<f64> = center
            .iter()
            .map(|c| {
                let z: f64 = StandardNormal.sample(rng);
                c + sigma * z
            })
            .collect();
        if v.iter().any(|x| *x != 0.0) {
            normalize(&mut v);
            return v;
        }
    }
}

fn to_raw(v: &[f64]) -> RawEmbedding {
    RawEmbedding::new(v.iter().map(|&x| x as f32).collect()).expect("finite synthetic vector")
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn synth(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(config.topics);
    let mut attempts = 0;
    while centers.len() < config.topics {
        attempts += 1;
        if attempts > MAX_CENTER_ATTEMPTS {
            return Err(Error::InvalidParameter(format!(
                "could not place {} centers at separation {}",
                config.topics, config.separation
            )));
        }
        let mut c = gaussian(&mut rng, config.dim);
        normalize(&mut c);
        if centers.iter().all(|o| dist(o, &c) >= config.separation) {
            centers.push(c);
        }
    }

    let mut docs = Vec::with_capacity(config.topics * config.docs_per_topic);
    let mut top_docs: Vec<Vec<String>> = Vec::with_capacity(config.topics);
    let mut topic_docs: Vec<Vec<String>> = Vec::with_capacity(config.topics);
    for (t, center) in centers.iter().enumerate() {
        let mut scored = Vec::with_capacity(config.docs_per_topic);
        for j in 0..config.docs_per_topic {
            let v = perturb(&mut rng, center, config.sigma);
            let id = format!("t{t:03}_d{j:05}");
            scored.push((dist(&v, center), id.clone()));
            docs.push((id, to_raw(&v)));
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        top_docs.push(
            scored
                .iter()
                .take(TOP_GRADE_DOCS)
                .map(|(_, id)| id.clone())
                .collect(),
        );
        topic_docs.push(scored.into_iter().map(|(_, id)| id).collect());
    }

    let mut conversations = Vec::with_capacity(config.conversations);
    let mut turn_topics = Vec::with_capacity(config.conversations);
    let mut qrels = Qrels::new();
    let query_sigma = config.query_noise();
    for c in 0..config.conversations {
        let mut order: Vec<usize> = (0..config.topics).collect();
        if c > 0 {
            order.shuffle(&mut rng);
        }
        let conv_id = format!("c{c:03}");
        let mut turns = Vec::new();
        let mut topics_of_turns = Vec::new();
        for &t in &order {
            for _ in 0..config.turns_per_topic {
                let v = if query_sigma > 0.0 {
                    perturb(&mut rng, &centers[t], query_sigma)
                } else {
                    centers[t].clone()
                };
                let turn_id = (turns.len() + 1).to_string();
                let topic_id = format!("{conv_id}_{turn_id}");
                for doc in &topic_docs[t] {
                    qrels.insert(topic_id.as_str(), doc.as_str(), 1);
                }
                for doc in &top_docs[t] {
                    qrels.insert(topic_id.as_str(), doc.as_str(), 2);
                }
                turns.push(Turn {
                    id: turn_id,
                    embedding: to_raw(&v),
                    text: None,
                });
                topics_of_turns.push(t);
            }
        }
        conversations.push(Conversation::new(conv_id, turns)?);
        turn_topics.push(topics_of_turns);
    }

    Ok(SynthData {
        docs,
        conversations,
        qrels,
        centers,
        turn_topics,
    })
}
