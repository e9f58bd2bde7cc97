//! TREC-style text formats: qrels (`topic 0 doc grade`) and run files
//! (`topic Q0 doc rank score tag`).

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::flat_index::ResultSet;

/// Ranked document ids per topic.
pub type Run = BTreeMap<String, Vec<String>>;

/// Graded judgments: topic -> doc -> grade.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    judgments: BTreeMap<String, HashMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, topic: impl Into<String>, doc: impl Into<String>, grade: u32) {
        self.judgments
            .entry(topic.into())
            .or_default()
            .insert(doc.into(), grade);
    }

    pub fn grade(&self, topic: &str, doc: &str) -> u32 {
        self.judgments
            .get(topic)
            .and_then(|t| t.get(doc))
            .copied()
            .unwrap_or(0)
    }

    pub fn topic(&self, topic: &str) -> Option<&HashMap<String, u32>> {
        self.judgments.get(topic)
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    pub fn parse<R: BufRead>(reader: R, source: &str) -> Result<Self> {
        let mut qrels = Qrels::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse {
                path: source.to_string(),
                line: lineno + 1,
                message,
            };
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 fields, found {}", fields.len())));
            }
            let grade: i64 = fields[3]
                .parse()
                .map_err(|_| bad(format!("bad grade {:?}", fields[3])))?;
            if grade < 0 {
                return Err(bad(format!("negative grade {grade}")));
            }
            qrels.insert(fields[0], fields[2], grade as u32);
        }
        Ok(qrels)
    }

    /// Lines sorted by topic then doc id.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for (topic, docs) in &self.judgments {
            let mut docs: Vec<_> = docs.iter().collect();
            docs.sort();
            for (doc, grade) in docs {
                writeln!(w, "{topic} 0 {doc} {grade}")?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Formats run lines with `score = -distance`, so larger scores rank higher.
pub fn format_run<'a, I>(topics: I, tag: &str) -> String
where
    I: IntoIterator<Item = (&'a str, &'a ResultSet)>,
{
    let mut out = String::new();
    for (topic, results) in topics {
        for (rank, n) in results.entries.iter().enumerate() {
            let _ = writeln!(
                out,
                "{topic} Q0 {} {} {:.9} {tag}",
                n.id,
                rank + 1,
                -n.distance
            );
        }
    }
    out
}

/// Parses a run file, ordering each topic's documents by rank.
pub fn parse_run<R: BufRead>(reader: R, source: &str) -> Result<Run> {
    let mut ranked: BTreeMap<String, Vec<(u64, String)>> = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: source.to_string(),
            line: lineno + 1,
            message,
        };
        if fields.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", fields.len())));
        }
        let rank: u64 = fields[3]
            .parse()
            .map_err(|_| bad(format!("bad rank {:?}", fields[3])))?;
        ranked
            .entry(fields[0].to_string())
            .or_default()
            .push((rank, fields[2].to_string()));
    }
    Ok(ranked
        .into_iter()
        .map(|(topic, mut docs)| {
            docs.sort();
            (topic, docs.into_iter().map(|(_, d)| d).collect())
        })
        .collect())
}
