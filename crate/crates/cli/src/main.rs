//! `histcache`: build indexes, replay conversations through the cache, tune
//! the hit threshold, generate synthetic data and benchmark latency.
//!
//! Results go to stdout as JSON. Failures print
//! `{"error": <kind>, "message": <text>}` on stderr and exit nonzero.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use histcache::harness::{
    bench, load_conversations, load_embeddings, replay, synth, trec_run_text, tsv_text, tune_on,
    write_report, BenchConfig, Mode, ReportFormat, RunConfig, SynthConfig,
};
use histcache::{DocumentStore, Qrels, QualityRule};
use log::{info, warn};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "histcache",
    version,
    about = "Client-side metric cache for conversational dense retrieval"
)]
struct Cli {
    /// More log output (repeatable). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lift raw embeddings and persist them as an EMBF index.
    Index(IndexArgs),
    /// Replay conversations with or without a cache.
    Replay(ReplayArgs),
    /// Derive the hit threshold from training conversations.
    TuneEpsilon(TuneArgs),
    /// Write a synthetic topic-shift benchmark.
    Synth(SynthArgs),
    /// Time back-end lookups against cache hits.
    Bench(BenchArgs),
}

#[derive(Args)]
struct IndexArgs {
    /// JSONL or EMBF embeddings.
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    None,
    Static,
    Dynamic,
}

impl From<CliMode> for Mode {
    fn from(m: CliMode) -> Self {
        match m {
            CliMode::None => Mode::None,
            CliMode::Static => Mode::Static,
            CliMode::Dynamic => Mode::Dynamic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CliRule {
    #[value(name = "any_ball", alias = "any-ball")]
    AnyBall,
    #[value(name = "closest_ball", alias = "closest-ball")]
    ClosestBall,
}

impl From<CliRule> for QualityRule {
    fn from(r: CliRule) -> Self {
        match r {
            CliRule::AnyBall => QualityRule::AnyBall,
            CliRule::ClosestBall => QualityRule::ClosestBall,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CliFormat {
    Json,
    Tsv,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long, value_enum, default_value = "dynamic")]
    mode: CliMode,
    /// Query cutoff.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Cache cutoff.
    #[arg(long, default_value_t = 1000)]
    kc: usize,
    #[arg(long, default_value_t = 0.04)]
    epsilon: f64,
    #[arg(long, value_enum, default_value = "any_ball")]
    quality_rule: CliRule,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    conversations: PathBuf,
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// TREC run file.
    #[arg(long)]
    out_run: Option<PathBuf>,
    #[arg(long)]
    out_report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    report_format: CliFormat,
    #[arg(long)]
    simulated_latency_ms: Option<f64>,
    /// Timing passes; per-query latency is the mean.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Error out when a conversation's cache would exceed this many documents.
    #[arg(long)]
    max_cache_docs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "histcache")]
    tag: String,
    /// Replay conversations concurrently.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    train_conversations: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    coverage_floor: f64,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 1000)]
    kc: usize,
    /// Low-coverage queries allowed to stay above the threshold.
    #[arg(long, default_value_t = 0)]
    outliers: usize,
    /// Write every (r_hat, coverage) point here as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    topics: usize,
    #[arg(long, default_value_t = 200)]
    docs_per_topic: usize,
    /// Turns per topic.
    #[arg(long, default_value_t = 5)]
    turns: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    /// Query noise; half of --sigma when omitted.
    #[arg(long)]
    query_sigma: Option<f64>,
    /// Minimum distance between topic centers.
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    #[arg(long, default_value_t = 1)]
    conversations: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    conversations: PathBuf,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long)]
    simulated_latency_ms: Option<f64>,
    /// Cache cutoffs to measure.
    #[arg(long, value_delimiter = ',', default_value = "1000,2000,5000,10000")]
    kc: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0.04)]
    epsilon: f64,
    #[arg(long, value_enum, default_value = "any_ball")]
    quality_rule: CliRule,
    /// Run the back-end batch on all cores.
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_store(path: &Path) -> histcache::Result<DocumentStore> {
    let set = load_embeddings(path)?;
    info!("loaded {} embeddings from {}", set.len(), path.display());
    set.into_store()
}

fn load_qrels(path: &Path) -> histcache::Result<Qrels> {
    Qrels::parse(
        BufReader::new(File::open(path)?),
        &path.display().to_string(),
    )
}

fn write_json(path: &Path, value: &serde_json::Value) -> histcache::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn print_json(value: &serde_json::Value) -> histcache::Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn check_parallel(requested: bool) {
    if requested && !cfg!(feature = "parallel") {
        warn!("built without the parallel feature; running sequentially");
    }
}

fn run_index(a: IndexArgs) -> histcache::Result<()> {
    let store = load_store(&a.embeddings)?;
    store.save(&a.out)?;
    print_json(&json!({
        "documents": store.len(),
        "dim": store.dim(),
        "max_norm": store.scale().max_norm(),
        "out": a.out,
    }))
}

fn run_replay(a: ReplayArgs) -> histcache::Result<()> {
    check_parallel(a.parallel);
    let config = RunConfig {
        mode: a.mode.into(),
        k: a.k,
        cache_cutoff: a.kc,
        epsilon: a.epsilon,
        quality_rule: a.quality_rule.into(),
        simulated_backend_latency_ms: a.simulated_latency_ms,
        repeats: a.repeats,
        seed: a.seed,
        parallel: a.parallel,
        max_cache_docs: a.max_cache_docs,
        tag: a.tag,
    };
    config.validate()?;
    let store = load_store(&a.embeddings)?;
    let conversations = load_conversations(&a.conversations)?;
    let qrels = a.qrels.as_deref().map(load_qrels).transpose()?;
    let rep = replay(&config, &store, &conversations, qrels.as_ref())?;
    if let Some(path) = &a.out_run {
        std::fs::write(path, trec_run_text(&rep))?;
    }
    if let Some(path) = &a.out_report {
        match a.report_format {
            CliFormat::Json => write_report(&rep, ReportFormat::Json, path)?,
            CliFormat::Tsv => std::fs::write(path, tsv_text(&rep.report))?,
        }
    }
    print_json(&serde_json::to_value(&rep.report.aggregates)?)
}

fn run_tune(a: TuneArgs) -> histcache::Result<()> {
    let store = load_store(&a.embeddings)?;
    let train = load_conversations(&a.train_conversations)?;
    let outcome = tune_on(&store, &train, a.k, a.kc, a.coverage_floor, a.outliers)?;
    if let Some(path) = &a.out {
        write_json(path, &serde_json::to_value(&outcome)?)?;
    }
    let low = outcome
        .points
        .iter()
        .filter(|p| p.coverage <= a.coverage_floor)
        .count();
    print_json(&json!({
        "epsilon": outcome.epsilon,
        "coverage_floor": outcome.coverage_floor,
        "outliers": outcome.outliers,
        "k": outcome.k,
        "cache_cutoff": outcome.cache_cutoff,
        "points": outcome.points.len(),
        "low_coverage_points": low,
    }))
}

fn run_synth(a: SynthArgs) -> histcache::Result<()> {
    let config = SynthConfig {
        seed: a.seed,
        topics: a.topics,
        turns_per_topic: a.turns,
        docs_per_topic: a.docs_per_topic,
        dim: a.dim,
        sigma: a.sigma,
        query_sigma: a.query_sigma,
        separation: a.separation,
        conversations: a.conversations,
    };
    let data = synth(&config)?;
    data.write_to_dir(&a.out_dir)?;
    let shifts: Vec<usize> = (0..data.conversations.len())
        .map(|c| data.topic_shifts(c))
        .collect();
    print_json(&json!({
        "documents": data.docs.len(),
        "conversations": data.conversations.len(),
        "topic_shifts": shifts,
        "qrels": data.qrels.len(),
        "out_dir": a.out_dir,
    }))
}

fn run_bench(a: BenchArgs) -> histcache::Result<()> {
    check_parallel(a.parallel);
    let config = BenchConfig {
        cache_cutoffs: a.kc,
        k: a.k,
        epsilon: a.epsilon,
        quality_rule: a.quality_rule.into(),
        repeats: a.repeats,
        simulated_latency_ms: a.simulated_latency_ms,
        parallel: a.parallel,
    };
    let store = load_store(&a.embeddings)?;
    let conversations = load_conversations(&a.conversations)?;
    let value = serde_json::to_value(bench(&config, &store, &conversations)?)?;
    if let Some(path) = &a.out {
        write_json(path, &value)?;
    }
    print_json(&value)
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => return fail("Usage", e.to_string().trim_end().to_string(), 2),
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Index(a) => run_index(a),
        Command::Replay(a) => run_replay(a),
        Command::TuneEpsilon(a) => run_tune(a),
        Command::Synth(a) => run_synth(a),
        Command::Bench(a) => run_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string(), 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use histcache::Error;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn quality_rule_spellings() {
        for s in ["any_ball", "any-ball", "closest_ball", "closest-ball"] {
            assert!(CliRule::from_str(s, false).is_ok(), "{s}");
        }
    }

    #[test]
    fn error_kinds_are_stable() {
        assert_eq!(Error::TruncatedFile.kind(), "TruncatedFile");
    }
}
