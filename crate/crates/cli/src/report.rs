//! JSON report types emitted by the commands. Schemas for these documents
//! are committed under `docs/schemas/`. All timing lives in the `timing`
//! object so reports are byte-deterministic once it is stripped.

use delta_infer_core::stats::{RunStats, StatsTotals};
use serde::{Deserialize, Serialize};

use crate::recount::ConvRecount;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timing {
    pub wall_time_secs_total: f64,
    pub wall_time_secs_per_frame_mean: f64,
}

impl Timing {
    pub fn from_stats(stats: &[RunStats]) -> Self {
        let total: f64 = stats.iter().map(|s| s.wall_time_secs).sum();
        Self {
            wall_time_secs_total: total,
            wall_time_secs_per_frame_mean: total / stats.len().max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LayerAggregate {
    pub layer: usize,
    pub kind: String,
    pub tiles_skipped: u64,
    pub tiles_very_sparse: u64,
    pub tiles_dense: u64,
    pub mac_performed: u64,
    pub mac_dense_equivalent: u64,
    pub bytes_touched_estimate: u64,
    pub mean_mask_density: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TotalsAggregate {
    pub tiles_total: u64,
    pub tiles_processed: u64,
    pub processed_tile_fraction: f64,
    pub mac_performed: u64,
    pub mac_dense_equivalent: u64,
    pub mac_fraction: f64,
    /// Labeled estimate: tensor/weight/state elements touched times four.
    pub bytes_touched_estimate: u64,
}

impl TotalsAggregate {
    pub fn from_totals(t: &StatsTotals) -> Self {
        Self {
            tiles_total: t.total_tiles(),
            tiles_processed: t.tiles_processed(),
            processed_tile_fraction: t.processed_tile_fraction(),
            mac_performed: t.mac_performed,
            mac_dense_equivalent: t.mac_dense_equivalent,
            mac_fraction: t.mac_fraction(),
            bytes_touched_estimate: t.bytes_touched_estimate,
        }
    }
}

/// Aggregates per-frame engine stats into per-layer and whole-run figures.
pub fn aggregate(stats: &[RunStats]) -> (Vec<LayerAggregate>, TotalsAggregate) {
    let mut layers: Vec<LayerAggregate> = Vec::new();
    let mut totals = StatsTotals::default();
    for frame in stats {
        totals.absorb(&frame.totals());
        for l in &frame.layers {
            if layers.len() <= l.layer {
                layers.resize_with(l.layer + 1, LayerAggregate::default);
            }
            let agg = &mut layers[l.layer];
            agg.layer = l.layer;
            agg.kind = l.kind.clone();
            agg.tiles_skipped += l.tiles_skipped;
            agg.tiles_very_sparse += l.tiles_very_sparse;
            agg.tiles_dense += l.tiles_dense;
            agg.mac_performed += l.mac_performed;
            agg.mac_dense_equivalent += l.mac_dense_equivalent;
            agg.bytes_touched_estimate += l.bytes_touched_estimate;
            agg.mean_mask_density += l.mask_density;
        }
    }
    for l in &mut layers {
        l.mean_mask_density /= stats.len().max(1) as f64;
    }
    (layers, TotalsAggregate::from_totals(&totals))
}

/// Per-frame stats summary of one layer kind kept for frame-level assertions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameSummary {
    pub frame: u64,
    pub tiles_processed: u64,
    pub tiles_total: u64,
    pub mac_performed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub model: String,
    pub frames: usize,
    pub threads: usize,
    pub dense_mode: bool,
    pub per_layer: Vec<LayerAggregate>,
    pub totals: TotalsAggregate,
    pub per_frame: Vec<FrameSummary>,
    pub timing: Timing,
}

pub const RUN_SCHEMA: &str = "delta-infer/run-report/v1";

impl RunReport {
    pub fn new(
        model: &str,
        stats: &[RunStats],
        threads: usize,
        dense_mode: bool,
    ) -> Self {
        let (per_layer, totals) = aggregate(stats);
        let per_frame = stats
            .iter()
            .map(|s| {
                let t = s.totals();
                FrameSummary {
                    frame: s.frame,
                    tiles_processed: t.tiles_processed(),
                    tiles_total: t.total_tiles(),
                    mac_performed: t.mac_performed,
                }
            })
            .collect();
        Self {
            schema: RUN_SCHEMA.into(),
            model: model.into(),
            frames: stats.len(),
            threads,
            dense_mode,
            per_layer,
            totals,
            per_frame,
            timing: Timing::from_stats(stats),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecountComparison {
    pub per_layer: Vec<ConvRecount>,
    /// True when every conv layer's engine counters equal the recount.
    pub matches_engine: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsReport {
    pub schema: String,
    #[serde(flatten)]
    pub run: RunReport,
    pub recount: RecountComparison,
}

pub const STATS_SCHEMA: &str = "delta-infer/stats-report/v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameDeviation {
    pub frame: u64,
    pub max_relative_deviation: f64,
    pub mean_relative_deviation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub schema: String,
    pub model: String,
    pub frames: usize,
    pub dense_mode: bool,
    pub per_frame: Vec<FrameDeviation>,
    pub max_deviation_overall: f64,
    /// Least-squares slope of the max-deviation curve after the dense first
    /// frame; the drift trend over time.
    pub trend_slope: f64,
    /// True when the deviation curve never decreases after frame 1 -- the
    /// signature of accumulating error.
    pub monotone_growth: bool,
    pub timing: Timing,
}

pub const COMPARE_SCHEMA: &str = "delta-infer/compare-report/v1";

impl CompareReport {
    pub fn from_deviations(
        model: &str,
        dense_mode: bool,
        per_frame: Vec<FrameDeviation>,
        timing: Timing,
    ) -> Self {
        let curve: Vec<f64> =
            per_frame.iter().skip(1).map(|d| d.max_relative_deviation).collect();
        let max_deviation_overall =
            per_frame.iter().map(|d| d.max_relative_deviation).fold(0.0, f64::max);
        let trend_slope = least_squares_slope(&curve);
        let monotone_growth =
            curve.len() > 1 && curve.windows(2).all(|w| w[1] >= w[0]) && curve[curve.len() - 1] > curve[0];
        Self {
            schema: COMPARE_SCHEMA.into(),
            model: model.into(),
            frames: per_frame.len(),
            dense_mode,
            per_frame,
            max_deviation_overall,
            trend_slope,
            monotone_growth,
            timing,
        }
    }
}

fn least_squares_slope(curve: &[f64]) -> f64 {
    let n = curve.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let mean_x = (nf - 1.0) / 2.0;
    let mean_y = curve.iter().sum::<f64>() / nf;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, y) in curve.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (y - mean_y);
        den += dx * dx;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: String,
    pub model: String,
    pub frames: usize,
    pub repetitions: usize,
    pub warmup_frames: usize,
    pub dense_mode: bool,
    pub threads: usize,
    pub engine_seconds: f64,
    pub oracle_seconds: f64,
    pub engine_fps: f64,
    pub oracle_fps: f64,
    /// Delta engine throughput over the dense reference's.
    pub speedup_vs_oracle: f64,
}

pub const BENCH_SCHEMA: &str = "delta-infer/bench-report/v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneReport {
    pub schema: String,
    pub model: String,
    pub total_budget: f64,
    pub calibration_frames: usize,
    pub outcome: delta_infer_core::tuner::TuneOutcome,
}

pub const TUNE_SCHEMA: &str = "delta-infer/tune-report/v1";

#[cfg(test)]
mod tests {
    use super::*;
    use delta_infer_core::stats::LayerStats;

    #[test]
    fn slope_of_constant_curve_is_zero() {
        assert_eq!(least_squares_slope(&[0.5, 0.5, 0.5]), 0.0);
    }

    #[test]
    fn slope_sign_tracks_trend() {
        assert!(least_squares_slope(&[0.0, 0.1, 0.2, 0.3]) > 0.0);
        assert!(least_squares_slope(&[0.3, 0.2, 0.1, 0.0]) < 0.0);
    }

    #[test]
    fn sawtooth_is_not_monotone_growth() {
        let per_frame = [0.0, 0.1, 0.2, 0.0, 0.1, 0.2, 0.0]
            .iter()
            .enumerate()
            .map(|(i, &d)| FrameDeviation {
                frame: i as u64,
                max_relative_deviation: d,
                mean_relative_deviation: d,
            })
            .collect();
        let r = CompareReport::from_deviations("m", false, per_frame, Timing::default());
        assert!(!r.monotone_growth);
        let growing = (0..6)
            .map(|i| FrameDeviation {
                frame: i as u64,
                max_relative_deviation: i as f64 * 0.1,
                mean_relative_deviation: 0.0,
            })
            .collect();
        let r = CompareReport::from_deviations("m", false, growing, Timing::default());
        assert!(r.monotone_growth);
    }

    #[test]
    fn aggregate_sums_layers_across_frames() {
        let mk = |mac: u64| RunStats {
            frame: 0,
            wall_time_secs: 0.0,
            layers: vec![LayerStats {
                layer: 0,
                kind: "conv".into(),
                mac_performed: mac,
                mac_dense_equivalent: 100,
                tiles_dense: 1,
                ..Default::default()
            }],
        };
        let (layers, totals) = aggregate(&[mk(10), mk(30)]);
        assert_eq!(layers[0].mac_performed, 40);
        assert_eq!(totals.mac_dense_equivalent, 200);
        assert!((totals.mac_fraction - 0.2).abs() < 1e-12);
    }
}
