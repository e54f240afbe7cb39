//! Sparse implementations of every layer type.
//!
//! Each operation consumes a delta tensor plus its update mask and produces
//! the same pair for the next layer. Nonlinear operations additionally carry
//! a [`LayerState`] across frames.

mod accumulate;
mod activation;
mod conv;
mod delta;
mod elementwise;
mod pool;
mod upsample;

pub use accumulate::dense_accumulate;
pub use activation::{activate_truncate, Activation};
pub use conv::{sparse_conv2d, ConvParams};
pub use delta::delta_generate;
pub use elementwise::{sparse_add, sparse_affine, sparse_concat};
pub use pool::{sparse_pool, PoolKind, PoolParams};
pub use upsample::{sparse_upsample, UpsampleMode};

use std::sync::Arc;

use crate::error::{EngineError, Result};
use crate::tensor::{FeatureTensor, Shape};

/// Per-layer cache carried across frames.
///
/// `accumulated` holds the dense-equivalent input seen so far (the sum of all
/// propagated deltas plus the first dense frame). `truncated` holds deltas
/// withheld since the pixel's last emitted update; it exists only at
/// truncation points and is all-zero wherever a pixel was just updated.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub accumulated: FeatureTensor,
    pub truncated: Option<FeatureTensor>,
    /// Set once a dense first frame has populated the buffers.
    pub initialized: bool,
}

impl LayerState {
    /// State holding accumulated values only (input layer, max pooling,
    /// output accumulator).
    pub fn values_only(shape: Shape) -> Self {
        Self { accumulated: FeatureTensor::zeros(shape), truncated: None, initialized: false }
    }

    /// State for a truncation point: accumulated plus withheld values.
    pub fn with_truncation(shape: Shape) -> Self {
        Self {
            accumulated: FeatureTensor::zeros(shape),
            truncated: Some(FeatureTensor::zeros(shape)),
            initialized: false,
        }
    }

    pub fn shape(&self) -> Shape {
        self.accumulated.shape()
    }

    /// Zeroes the buffers so the next frame is processed densely again.
    pub fn reset(&mut self) {
        self.accumulated.fill(0.0);
        if let Some(t) = &mut self.truncated {
            t.fill(0.0);
        }
        self.initialized = false;
    }

    pub(crate) fn expect_ready(&self, what: &str, first_frame: bool) -> Result<()> {
        if !first_frame && !self.initialized {
            return Err(EngineError::MissingState(format!(
                "{what}: state was never initialized by a dense frame"
            )));
        }
        Ok(())
    }
}

/// Per-tile dispatch boundaries. Tiles with no active input pixel are always
/// skipped; tiles with at most `very_sparse_max` active pixels take the
/// gathered very-sparse path; everything above runs dense.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DispatchConfig {
    pub very_sparse_max: usize,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        Self { very_sparse_max: 4 }
    }
}

/// Execution settings shared by all layer operations of one graph.
#[derive(Debug, Clone, Default)]
pub struct ExecContext {
    pub dispatch: DispatchConfig,
    /// Fill masked-off output pixels with NaN so any illegal read of stale
    /// data fails loudly. Off in release-style runs: unprocessed values are
    /// simply left stale, they are never read.
    pub poison: bool,
    pub(crate) pool: Option<Arc<rayon::ThreadPool>>,
}

impl ExecContext {
    pub fn with_threads(threads: usize) -> Result<Self> {
        let pool = if threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| EngineError::InvalidParameter(format!("thread pool: {e}")))?;
            Some(Arc::new(pool))
        } else {
            None
        };
        Ok(Self { pool, ..Default::default() })
    }

    pub fn poisoned(mut self, poison: bool) -> Self {
        self.poison = poison;
        self
    }

    pub fn dispatched(mut self, dispatch: DispatchConfig) -> Self {
        self.dispatch = dispatch;
        self
    }

    pub fn threads(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }
}

pub(crate) fn check_tensor_mask_pair(
    tensor: &FeatureTensor,
    mask: &crate::mask::UpdateMask,
    what: &str,
) -> Result<()> {
    if tensor.shape().spatial() != mask.spatial() {
        return Err(EngineError::ShapeMismatch(format!(
            "{what}: tensor {} does not match mask {:?}",
            tensor.shape(),
            mask.spatial()
        )));
    }
    Ok(())
}
