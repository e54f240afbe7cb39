//! Implementations behind the `delta-infer` subcommands. Each returns the
//! report it would print, so tests drive them directly.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};

use delta_infer_core::io::write_tensor;
use delta_infer_core::manifest::load_model;
use delta_infer_core::metrics::{max_relative_deviation, mean_relative_deviation};
use delta_infer_core::oracle::dense_run_frame;
use delta_infer_core::stats::RunStats;
use delta_infer_core::tensor::FeatureTensor;
use delta_infer_core::tuner::{deviation_loss, tune, TuneConfig};
use delta_infer_core::ModelGraph;

use crate::ingest::{ingest_frames, NormalizeOptions};
use crate::recount::{recount_frame, ConvRecount};
use crate::report::{
    BenchReport, CompareReport, FrameDeviation, RecountComparison, RunReport, StatsReport, Timing,
    TuneReport, BENCH_SCHEMA, STATS_SCHEMA, TUNE_SCHEMA,
};

/// Engine settings shared by all commands.
#[derive(Debug, Clone)]
pub struct EngineOpts {
    pub threads: usize,
    /// Negative thresholds everywhere: every pixel reprocessed each frame.
    pub dense: bool,
    /// `Some(n)` resets state buffers every n frames (0 disables); `None`
    /// keeps the engine default of 500.
    pub reset_interval: Option<u64>,
    /// Force NaN poisoning of masked-off pixels on or off; `None` keeps the
    /// build default (on under debug assertions).
    pub poison: Option<bool>,
}

impl Default for EngineOpts {
    fn default() -> Self {
        Self { threads: 1, dense: false, reset_interval: None, poison: None }
    }
}

fn load_configured(model: &Path, opts: &EngineOpts) -> Result<(ModelGraph, String)> {
    let (mut graph, manifest) =
        load_model(model).with_context(|| format!("loading model {}", model.display()))?;
    graph.set_threads(opts.threads)?;
    if let Some(interval) = opts.reset_interval {
        // 0 disables the automatic reset; absent keeps the engine default.
        graph.set_reset_interval((interval > 0).then_some(interval));
    }
    if let Some(p) = opts.poison {
        graph.set_poison(p);
    }
    if opts.dense {
        graph.set_dense_mode();
    }
    Ok((graph, manifest.name))
}

fn load_frames(frames: &Path) -> Result<Vec<FeatureTensor>> {
    let frames = ingest_frames(frames, &NormalizeOptions::default())?;
    if frames.is_empty() {
        bail!("no frames to process");
    }
    Ok(frames)
}

/// `delta-infer run`: delta inference over a sequence, writing per-frame
/// outputs (".dct") and the stats report into `out_dir`.
pub fn cmd_run(model: &Path, frames: &Path, out_dir: &Path, opts: &EngineOpts) -> Result<RunReport> {
    let (mut graph, name) = load_configured(model, opts)?;
    let clip = load_frames(frames)?;
    std::fs::create_dir_all(out_dir)?;
    let mut stats: Vec<RunStats> = Vec::with_capacity(clip.len());
    for (i, frame) in clip.iter().enumerate() {
        let (out, s) = graph.run_frame(frame)?;
        write_tensor(&out_dir.join(format!("frame_{i:05}.dct")), &out)?;
        stats.push(s);
    }
    let report = RunReport::new(&name, &stats, opts.threads, opts.dense);
    std::fs::write(out_dir.join("run_report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// `delta-infer stats`: runs the engine with mask tracing and validates its
/// counters against the independent mask-propagation recount.
pub fn cmd_stats(model: &Path, frames: &Path, opts: &EngineOpts) -> Result<StatsReport> {
    let (mut graph, name) = load_configured(model, opts)?;
    let clip = load_frames(frames)?;
    let mut stats: Vec<RunStats> = Vec::with_capacity(clip.len());
    let mut recount_total: Vec<ConvRecount> = Vec::new();
    for frame in &clip {
        let (_, s, masks) = graph.run_frame_traced(frame)?;
        let frame_recount = recount_frame(&graph, &masks, 4);
        if recount_total.is_empty() {
            recount_total = frame_recount;
        } else {
            for (acc, one) in recount_total.iter_mut().zip(&frame_recount) {
                acc.absorb(one);
            }
        }
        stats.push(s);
    }
    let run = RunReport::new(&name, &stats, opts.threads, opts.dense);
    let matches_engine = recount_total.iter().all(|rc| {
        run.per_layer.get(rc.layer).is_some_and(|l| {
            l.tiles_skipped == rc.tiles_skipped
                && l.tiles_very_sparse == rc.tiles_very_sparse
                && l.tiles_dense == rc.tiles_dense
                && l.mac_performed == rc.mac_performed
                && l.mac_dense_equivalent == rc.mac_dense_equivalent
        })
    });
    Ok(StatsReport {
        schema: STATS_SCHEMA.into(),
        run,
        recount: RecountComparison { per_layer: recount_total, matches_engine },
    })
}

/// `delta-infer compare`: delta and dense pipelines side by side with the
/// per-frame deviation drift curve.
pub fn cmd_compare(model: &Path, frames: &Path, opts: &EngineOpts) -> Result<CompareReport> {
    let (mut graph, name) = load_configured(model, opts)?;
    let clip = load_frames(frames)?;
    let mut per_frame = Vec::with_capacity(clip.len());
    let mut stats = Vec::with_capacity(clip.len());
    for (i, frame) in clip.iter().enumerate() {
        let reference = dense_run_frame(&graph, frame)?;
        let (out, s) = graph.run_frame(frame)?;
        per_frame.push(FrameDeviation {
            frame: i as u64,
            max_relative_deviation: max_relative_deviation(&out, &reference),
            mean_relative_deviation: mean_relative_deviation(&out, &reference),
        });
        stats.push(s);
    }
    Ok(CompareReport::from_deviations(&name, opts.dense, per_frame, Timing::from_stats(&stats)))
}

/// `delta-infer tune`: auto-tunes truncation thresholds on calibration
/// frames, writing the tuned manifest (plus a blob copy) and the tuning
/// report into `out_dir`.
pub fn cmd_tune(
    model: &Path,
    frames: &Path,
    budget: f64,
    out_dir: &Path,
    opts: &EngineOpts,
) -> Result<TuneReport> {
    let (mut graph, manifest) = {
        let (mut g, m) = load_model(model)?;
        g.set_threads(opts.threads)?;
        if let Some(p) = opts.poison {
            g.set_poison(p);
        }
        (g, m)
    };
    let clip = load_frames(frames)?;
    let config = TuneConfig { total_budget: budget, ..Default::default() };
    let outcome = tune(&mut graph, std::slice::from_ref(&clip), &config, &deviation_loss)?;

    std::fs::create_dir_all(out_dir)?;
    let mut tuned = manifest.with_epsilons(&graph, &outcome.epsilons)?;
    let blob_src = manifest.blob_path(model);
    let blob_name = blob_src
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "weights.bin".into());
    std::fs::copy(&blob_src, out_dir.join(&blob_name))
        .with_context(|| format!("copying weight blob {}", blob_src.display()))?;
    tuned.weights = blob_name;
    tuned.save(&out_dir.join("tuned_manifest.json"))?;

    let report = TuneReport {
        schema: TUNE_SCHEMA.into(),
        model: manifest.name.clone(),
        total_budget: budget,
        calibration_frames: clip.len(),
        outcome,
    };
    std::fs::write(out_dir.join("tuning_report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// `delta-infer bench`: times the dense oracle against the delta engine over
/// the sequence, excluding warm-up frames. Poisoning defaults off here so the
/// measurement reflects the production configuration.
pub fn cmd_bench(
    model: &Path,
    frames: &Path,
    repetitions: usize,
    opts: &EngineOpts,
) -> Result<BenchReport> {
    let mut opts = opts.clone();
    opts.poison = Some(opts.poison.unwrap_or(false));
    let (mut graph, name) = load_configured(model, &opts)?;
    let clip = load_frames(frames)?;
    let warmup = clip.len().min(3);
    let timed: &[FeatureTensor] = &clip[warmup..];
    if timed.is_empty() {
        bail!("sequence too short to benchmark: {} frames", clip.len());
    }
    let repetitions = repetitions.max(1);

    for frame in &clip[..warmup] {
        graph.run_frame(frame)?;
    }
    let started = Instant::now();
    for _ in 0..repetitions {
        for frame in timed {
            graph.run_frame(frame)?;
        }
    }
    let engine_seconds = started.elapsed().as_secs_f64();

    // Oracle arm: same frames, stateless dense evaluation.
    for frame in &clip[..warmup] {
        dense_run_frame(&graph, frame)?;
    }
    let started = Instant::now();
    for _ in 0..repetitions {
        for frame in timed {
            dense_run_frame(&graph, frame)?;
        }
    }
    let oracle_seconds = started.elapsed().as_secs_f64();

    let frames_timed = (timed.len() * repetitions) as f64;
    Ok(BenchReport {
        schema: BENCH_SCHEMA.into(),
        model: name,
        frames: clip.len(),
        repetitions,
        warmup_frames: warmup,
        dense_mode: opts.dense,
        threads: opts.threads,
        engine_seconds,
        oracle_seconds,
        engine_fps: frames_timed / engine_seconds.max(1e-12),
        oracle_fps: frames_timed / oracle_seconds.max(1e-12),
        speedup_vs_oracle: oracle_seconds / engine_seconds.max(1e-12),
    })
}
