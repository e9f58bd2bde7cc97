//! Orchestration: data ingestion, replay, tuning, benchmarking and reports.

pub mod bench;
pub mod data;
pub mod replay;
pub mod report;
pub mod synth;
pub mod tune;

pub use bench::{bench, conversation_speedup, conversation_time, BenchConfig, LatencyTable};
pub use data::{load_conversations, load_embeddings, Conversation, EmbeddingSet, Turn};
pub use replay::{replay, Aggregates, Mode, QueryRow, Replay, RunConfig, RunReport};
pub use report::{
    read_report, recompute_aggregates, trec_run_text, tsv_text, write_report, ReportFormat,
};
pub use synth::{synth, SynthConfig, SynthData};
pub use tune::{collect_tune_points, tune_on, TuneOutcome};
