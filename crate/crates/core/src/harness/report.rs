use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::replay::{Aggregates, Replay, RunReport, REPORT_SCHEMA_VERSION};
use crate::trec::format_run;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Tsv,
    Trec,
}

pub fn trec_run_text(replay: &Replay) -> String {
    format_run(
        replay.run.iter().map(|(t, rs)| (t.as_str(), rs)),
        &replay.report.config.tag,
    )
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x}"))
}

/// One header line plus one line per query.
pub fn tsv_text(report: &RunReport) -> String {
    let mut out = String::from(
        "conversation\tturn\ttopic\thit\tbackend_calls\tr_hat_best\tr_hat_closest\tcoverage\tcache_docs\tlatency_ms\n",
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.conversation,
            r.turn,
            r.topic,
            u8::from(r.hit),
            r.backend_calls,
            opt(r.r_hat_best),
            opt(r.r_hat_closest),
            r.coverage,
            r.cache_docs,
            r.latency_ms
        );
    }
    out
}

pub fn write_report(replay: &Replay, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        ReportFormat::Json => serde_json::to_writer_pretty(&mut w, &replay.report)?,
        ReportFormat::Tsv => w.write_all(tsv_text(&replay.report).as_bytes())?,
        ReportFormat::Trec => w.write_all(trec_run_text(replay).as_bytes())?,
    }
    w.flush()?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<RunReport> {
    let report: RunReport = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if report.schema_version != REPORT_SCHEMA_VERSION {
        return Err(Error::UnsupportedVersion(report.schema_version));
    }
    Ok(report)
}

/// Aggregates rebuilt from a report's own rows.
pub fn recompute_aggregates(report: &RunReport) -> Aggregates {
    Aggregates::from_rows(
        report.config.mode,
        &report.rows,
        report.rank_metrics.as_ref(),
    )
}
