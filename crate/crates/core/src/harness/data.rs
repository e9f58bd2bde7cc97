//! Loading and writing document embeddings and conversation logs.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embf;
use crate::error::{Error, Result};
use crate::flat_index::DocumentStore;
use crate::geometry::{CollectionScale, RawEmbedding};

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub id: String,
    pub embedding: RawEmbedding,
    pub text: Option<String>,
}

/// One user session: rewritten utterances in the order they were asked.
#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn new(id: impl Into<String>, turns: Vec<Turn>) -> Result<Self> {
        let id = id.into();
        if turns.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "conversation {id:?} has no turns"
            )));
        }
        let mut seen = HashSet::new();
        for t in &turns {
            if !seen.insert(t.id.as_str()) {
                return Err(Error::DuplicateTurn {
                    conversation: id,
                    turn: t.id.clone(),
                });
            }
        }
        Ok(Self { id, turns })
    }

    /// TREC topic id of a turn: `<conversation>_<turn>`.
    pub fn topic_id(&self, turn: &Turn) -> String {
        format!("{}_{}", self.id, turn.id)
    }
}

/// Either raw encoder vectors or rows that were already lifted.
#[derive(Debug, Clone)]
pub enum EmbeddingSet {
    Raw(Vec<(String, RawEmbedding)>),
    Lifted {
        ids: Vec<String>,
        vectors: Vec<f32>,
        dim: usize,
        scale: CollectionScale,
    },
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        match self {
            EmbeddingSet::Raw(v) => v.len(),
            EmbeddingSet::Lifted { ids, .. } => ids.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_store(self) -> Result<DocumentStore> {
        match self {
            EmbeddingSet::Raw(docs) => DocumentStore::build(docs),
            EmbeddingSet::Lifted {
                ids,
                vectors,
                dim,
                scale,
            } => DocumentStore::from_lifted(ids, vectors, dim, scale),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum IdValue {
    Str(String),
    Int(i64),
}

impl From<IdValue> for String {
    fn from(v: IdValue) -> Self {
        match v {
            IdValue::Str(s) => s,
            IdValue::Int(i) => i.to_string(),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EmbeddingLine {
    Header {
        lifted: bool,
        #[serde(default)]
        max_norm: Option<f64>,
    },
    Record {
        id: IdValue,
        vec: Vec<f32>,
    },
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    vec: &'a [f32],
}

#[derive(Deserialize)]
struct TurnLine {
    conversation: IdValue,
    turn: IdValue,
    vec: Vec<f32>,
    #[serde(default)]
    text: Option<String>,
}

#[derive(Serialize)]
struct TurnOut<'a> {
    conversation: &'a str,
    turn: &'a str,
    vec: &'a [f32],
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Reads an `EMBF` index or a JSONL embedding file.
///
/// JSONL files hold one `{"id": .., "vec": [..]}` object per line. An optional
/// first line `{"lifted": true, "max_norm": M}` declares the vectors as
/// already lifted (`l + 1` dims, unit norm); otherwise they are raw.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    if embf::sniff(path)? {
        let data = embf::read_embf(BufReader::new(File::open(path)?))?;
        return Ok(EmbeddingSet::Lifted {
            ids: data.ids,
            vectors: data.vectors,
            dim: data.dim,
            scale: CollectionScale::new(data.max_norm)?,
        });
    }
    let reader = BufReader::new(File::open(path)?);
    let mut lifted: Option<Option<f64>> = None;
    let mut records: Vec<(String, RawEmbedding)> = Vec::new();
    let mut dim = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: EmbeddingLine =
            serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        match parsed {
            EmbeddingLine::Header {
                lifted: l,
                max_norm,
            } => {
                if !records.is_empty() || lifted.is_some() {
                    return Err(parse_err(path, i + 1, "header must be the first line"));
                }
                lifted = Some(if l {
                    Some(max_norm.unwrap_or(1.0))
                } else {
                    None
                });
            }
            EmbeddingLine::Record { id, vec } => {
                let expected = *dim.get_or_insert(vec.len());
                if vec.len() != expected {
                    return Err(Error::DimensionMismatch {
                        expected,
                        found: vec.len(),
                    });
                }
                let emb =
                    RawEmbedding::new(vec).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
                records.push((id.into(), emb));
            }
        }
    }
    match lifted.flatten() {
        None => Ok(EmbeddingSet::Raw(records)),
        Some(max_norm) => {
            let dim = dim.unwrap_or(0);
            let mut ids = Vec::with_capacity(records.len());
            let mut vectors = Vec::with_capacity(records.len() * dim);
            for (id, e) in records {
                let norm = e.norm();
                if (norm - 1.0).abs() > 1e-4 {
                    return Err(Error::InvalidParameter(format!(
                        "document {id:?} is declared lifted but has norm {norm}"
                    )));
                }
                ids.push(id);
                vectors.extend_from_slice(e.as_slice());
            }
            Ok(EmbeddingSet::Lifted {
                ids,
                vectors,
                dim,
                scale: CollectionScale::new(max_norm)?,
            })
        }
    }
}

pub fn write_embeddings_jsonl<'a, I>(path: impl AsRef<Path>, docs: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a RawEmbedding)>,
{
    let mut w = BufWriter::new(File::create(path)?);
    for (id, e) in docs {
        serde_json::to_writer(
            &mut w,
            &RecordOut {
                id,
                vec: e.as_slice(),
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads conversation turns from JSONL (`{"conversation", "turn", "vec"}` per
/// line, turns in order). Conversations keep the order of first appearance.
pub fn load_conversations(path: impl AsRef<Path>) -> Result<Vec<Conversation>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut order: Vec<(String, Vec<Turn>)> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    let mut dim = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TurnLine =
            serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        let expected = *dim.get_or_insert(rec.vec.len());
        if rec.vec.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: rec.vec.len(),
            });
        }
        let embedding =
            RawEmbedding::new(rec.vec).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        let conv: String = rec.conversation.into();
        let idx = *slot.entry(conv.clone()).or_insert_with(|| {
            order.push((conv, Vec::new()));
            order.len() - 1
        });
        order[idx].1.push(Turn {
            id: rec.turn.into(),
            embedding,
            text: rec.text,
        });
    }
    order
        .into_iter()
        .map(|(id, turns)| Conversation::new(id, turns))
        .collect()
}

pub fn write_conversations_jsonl(
    path: impl AsRef<Path>,
    conversations: &[Conversation],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for c in conversations {
        for t in &c.turns {
            serde_json::to_writer(
                &mut w,
                &TurnOut {
                    conversation: &c.id,
                    turn: &t.id,
                    vec: t.embedding.as_slice(),
                    text: t.text.as_deref(),
                },
            )?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}
