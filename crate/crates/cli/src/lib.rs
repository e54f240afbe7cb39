//! Library surface of the `delta-infer` command-line tool: frame ingestion,
//! command implementations, report types and the independent stats recount.

pub mod commands;
pub mod ingest;
pub mod recount;
pub mod report;

pub use commands::{cmd_bench, cmd_compare, cmd_run, cmd_stats, cmd_tune, EngineOpts};
pub use ingest::{ingest_frames, NormalizeOptions};
