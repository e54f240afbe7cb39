use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use delta_infer::{cmd_bench, cmd_compare, cmd_run, cmd_stats, cmd_tune, EngineOpts};

/// Sparse delta-propagation CNN inference for fixed-camera video.
#[derive(Parser)]
#[command(name = "delta-infer", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Model manifest (JSON) with its weight blob next to it.
    #[arg(long)]
    model: PathBuf,
    /// Frame source: a multi-frame .dct container or a directory of binary
    /// PNM images (P5/P6).
    #[arg(long)]
    frames: PathBuf,
    /// Worker threads for tile-level parallelism (1 = fully serial,
    /// bit-reproducible). Falls back to DELTA_INFER_THREADS, then 1.
    #[arg(long)]
    threads: Option<usize>,
    /// Dense mode: negative truncation thresholds, every pixel reprocessed.
    #[arg(long)]
    dense: bool,
    /// Reset state buffers every N frames to flush float drift.
    #[arg(long, value_name = "N")]
    reset_interval: Option<u64>,
    /// Fill masked-off pixels with NaN so stale-data reads fail loudly.
    #[arg(long)]
    poison_debug: bool,
}

impl CommonArgs {
    fn opts(&self) -> EngineOpts {
        let threads = self
            .threads
            .or_else(|| std::env::var("DELTA_INFER_THREADS").ok().and_then(|v| v.parse().ok()))
            .unwrap_or(1)
            .max(1);
        EngineOpts {
            threads,
            dense: self.dense,
            reset_interval: self.reset_interval,
            poison: self.poison_debug.then_some(true),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run delta inference over a frame sequence, writing per-frame outputs
    /// and a stats report.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory for frame tensors and run_report.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the delta and dense pipelines side by side and report the
    /// per-frame deviation drift curve.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// Optional directory for compare_report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Auto-tune per-layer truncation thresholds on calibration frames.
    Tune {
        #[command(flatten)]
        common: CommonArgs,
        /// Total allowed loss increase across all layers.
        #[arg(long, default_value_t = 0.03)]
        budget: f64,
        /// Output directory for tuned_manifest.json and tuning_report.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the dense reference against the delta engine.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of timed passes over the sequence.
        #[arg(long, default_value_t = 1)]
        repetitions: usize,
        /// Optional directory for bench_report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate engine tile/MAC counters against the independent
    /// mask-propagation recount.
    Stats {
        #[command(flatten)]
        common: CommonArgs,
        /// Optional directory for stats_report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit<T: serde::Serialize>(report: &T, out: Option<&PathBuf>, file_name: &str) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(file_name), &json)?;
    }
    println!("{json}");
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { common, out } => {
            let report = cmd_run(&common.model, &common.frames, &out, &common.opts())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Compare { common, out } => {
            let report = cmd_compare(&common.model, &common.frames, &common.opts())?;
            emit(&report, out.as_ref(), "compare_report.json")?;
        }
        Command::Tune { common, budget, out } => {
            let report = cmd_tune(&common.model, &common.frames, budget, &out, &common.opts())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Bench { common, repetitions, out } => {
            let report = cmd_bench(&common.model, &common.frames, repetitions, &common.opts())?;
            emit(&report, out.as_ref(), "bench_report.json")?;
        }
        Command::Stats { common, out } => {
            let report = cmd_stats(&common.model, &common.frames, &common.opts())?;
            emit(&report, out.as_ref(), "stats_report.json")?;
        }
    }
    Ok(())
}
