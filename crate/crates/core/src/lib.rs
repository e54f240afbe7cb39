//! Sparse delta-propagation CNN inference for fixed-camera video.
//!
//! Instead of re-evaluating every frame densely, the engine propagates
//! per-pixel frame differences (deltas) through the whole network, tracks
//! which pixels carry valid updates with per-pixel masks, skips computation
//! on unchanged tiles and truncates insignificant updates without ever losing
//! them: withheld changes accumulate per layer and are emitted as soon as
//! they cross the layer's threshold.
//!
//! The crate also ships the dense reference implementation used as ground
//! truth, a front-to-back threshold auto-tuner, and synthetic model/video
//! generators for tests and benchmarks.

// Index loops over (batch, row, col, channel) coordinates mirror the layouts
// they traverse; iterator rewrites obscure them.
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod graph;
pub mod io;
pub mod layers;
pub mod manifest;
pub mod mask;
pub mod metrics;
pub mod oracle;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod tile;
pub mod tuner;

pub use error::{EngineError, Result};
pub use graph::{GraphBuilder, LayerKind, ModelGraph};
pub use layers::{
    Activation, ConvParams, DispatchConfig, ExecContext, LayerState, PoolKind, PoolParams,
    UpsampleMode,
};
pub use manifest::{load_model, ModelManifest};
pub use mask::UpdateMask;
pub use stats::{LayerStats, RunStats, StatsTotals};
pub use tensor::{FeatureTensor, Shape};
pub use tile::{ConvGeometry, TileSpec};
pub use tuner::{tune, TuneConfig, TuneOutcome};
