//! Sparse pooling. Average pooling is linear and stateless; max pooling is
//! nonlinear and keeps the accumulated pre-pool input so it can emit exact
//! output differences. No truncation happens inside pooling.

use crate::error::{EngineError, Result};
use crate::mask::{mask_dilate_conv, UpdateMask};
use crate::tensor::{FeatureTensor, Shape};
use crate::tile::ConvGeometry;

use super::{check_tensor_mask_pair, ExecContext, LayerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
    GlobalAvg,
}

impl PoolKind {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "max" => PoolKind::Max,
            "avg" => PoolKind::Avg,
            "global_avg" | "global-avg" => PoolKind::GlobalAvg,
            other => return Err(EngineError::InvalidParameter(format!("unknown pool kind '{other}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            PoolKind::Max => "max",
            PoolKind::Avg => "avg",
            PoolKind::GlobalAvg => "global_avg",
        }
    }
}

/// Pooling window geometry; ignored for global average pooling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolParams {
    pub kind: PoolKind,
    pub geometry: ConvGeometry,
}

impl PoolParams {
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self.kind {
            PoolKind::GlobalAvg => Ok(Shape::new(input.batch, 1, 1, input.channels)),
            _ => {
                let g = &self.geometry;
                if g.padding > g.dilation * (g.kernel_h - 1) || g.padding > g.dilation * (g.kernel_w - 1)
                {
                    return Err(EngineError::InvalidParameter(
                        "pool padding exceeds window span".into(),
                    ));
                }
                let (h, w) = g.output_size(input.height, input.width)?;
                Ok(Shape::new(input.batch, h, w, input.channels))
            }
        }
    }
}

/// The output mask is the input mask dilated by the pooling window (for
/// global average: active iff any input pixel is active). Max pooling reads
/// the accumulated buffer across the whole window, adds the delta only at
/// active pixels, and emits new-max minus old-max for every window touching
/// an active pixel; the pixel stays marked active even when that difference
/// is zero.
pub fn sparse_pool(
    delta_in: &FeatureTensor,
    mask_in: &UpdateMask,
    state: Option<&mut LayerState>,
    params: &PoolParams,
    first_frame: bool,
    ctx: &ExecContext,
) -> Result<(FeatureTensor, UpdateMask)> {
    check_tensor_mask_pair(delta_in, mask_in, "sparse_pool input")?;
    let out_shape = params.output_shape(delta_in.shape())?;
    match params.kind {
        PoolKind::Max => {
            let state = state.ok_or_else(|| {
                EngineError::MissingState("max pooling is nonlinear and requires a state".into())
            })?;
            if state.shape() != delta_in.shape() {
                return Err(EngineError::ShapeMismatch(format!(
                    "sparse_pool: state {} vs input {}",
                    state.shape(),
                    delta_in.shape()
                )));
            }
            state.expect_ready("sparse_pool(max)", first_frame)?;
            let r = max_pool(delta_in, mask_in, state, params, out_shape, ctx);
            if first_frame {
                state.initialized = true;
            }
            r
        }
        PoolKind::Avg => avg_pool(delta_in, mask_in, params, out_shape, ctx),
        PoolKind::GlobalAvg => global_avg_pool(delta_in, mask_in, out_shape, ctx),
    }
}

fn max_pool(
    delta_in: &FeatureTensor,
    mask_in: &UpdateMask,
    state: &mut LayerState,
    params: &PoolParams,
    out_shape: Shape,
    ctx: &ExecContext,
) -> Result<(FeatureTensor, UpdateMask)> {
    let g = &params.geometry;
    let mask_out = mask_dilate_conv(mask_in, g)?;
    let mut out = FeatureTensor::stale(out_shape, ctx.poison);
    let in_shape = delta_in.shape();
    let channels = in_shape.channels;

    // Outputs first (they read the pre-update accumulated buffer), state
    // update afterwards.
    for b in 0..out_shape.batch {
        for oy in 0..out_shape.height {
            for ox in 0..out_shape.width {
                if !mask_out.get(b, oy, ox) {
                    continue;
                }
                let y_origin = g.tap_origin(oy);
                let x_origin = g.tap_origin(ox);
                for c in 0..channels {
                    let mut new_max = f32::NEG_INFINITY;
                    let mut old_max = f32::NEG_INFINITY;
                    for kr in 0..g.kernel_h {
                        let iy = y_origin + (kr * g.dilation) as isize;
                        if iy < 0 || iy as usize >= in_shape.height {
                            continue;
                        }
                        for kc in 0..g.kernel_w {
                            let ix = x_origin + (kc * g.dilation) as isize;
                            if ix < 0 || ix as usize >= in_shape.width {
                                continue;
                            }
                            let (iy, ix) = (iy as usize, ix as usize);
                            let acc = state.accumulated.at(b, iy, ix, c);
                            let cur = if mask_in.get(b, iy, ix) {
                                acc + delta_in.at(b, iy, ix, c)
                            } else {
                                acc
                            };
                            new_max = new_max.max(cur);
                            old_max = old_max.max(acc);
                        }
                    }
                    out.set(b, oy, ox, c, new_max - old_max);
                }
            }
        }
    }

    for b in 0..in_shape.batch {
        for y in 0..in_shape.height {
            for x in 0..in_shape.width {
                if !mask_in.get(b, y, x) {
                    continue;
                }
                let off = state.accumulated.pixel_offset(b, y, x);
                for c in 0..channels {
                    state.accumulated.data_mut()[off + c] += delta_in.data()[off + c];
                }
            }
        }
    }
    Ok((out, mask_out))
}

fn avg_pool(
    delta_in: &FeatureTensor,
    mask_in: &UpdateMask,
    params: &PoolParams,
    out_shape: Shape,
    ctx: &ExecContext,
) -> Result<(FeatureTensor, UpdateMask)> {
    let g = &params.geometry;
    let mask_out = mask_dilate_conv(mask_in, g)?;
    let mut out = FeatureTensor::stale(out_shape, ctx.poison);
    let in_shape = delta_in.shape();
    let channels = in_shape.channels;
    // Padding positions count toward the divisor with value zero.
    let area = (g.kernel_h * g.kernel_w) as f32;

    for b in 0..out_shape.batch {
        for oy in 0..out_shape.height {
            for ox in 0..out_shape.width {
                if !mask_out.get(b, oy, ox) {
                    continue;
                }
                let y_origin = g.tap_origin(oy);
                let x_origin = g.tap_origin(ox);
                for c in 0..channels {
                    let mut sum = 0.0f32;
                    for kr in 0..g.kernel_h {
                        let iy = y_origin + (kr * g.dilation) as isize;
                        if iy < 0 || iy as usize >= in_shape.height {
                            continue;
                        }
                        for kc in 0..g.kernel_w {
                            let ix = x_origin + (kc * g.dilation) as isize;
                            if ix < 0 || ix as usize >= in_shape.width {
                                continue;
                            }
                            if mask_in.get(b, iy as usize, ix as usize) {
                                sum += delta_in.at(b, iy as usize, ix as usize, c);
                            }
                        }
                    }
                    out.set(b, oy, ox, c, sum / area);
                }
            }
        }
    }
    Ok((out, mask_out))
}

fn global_avg_pool(
    delta_in: &FeatureTensor,
    mask_in: &UpdateMask,
    out_shape: Shape,
    ctx: &ExecContext,
) -> Result<(FeatureTensor, UpdateMask)> {
    let in_shape = delta_in.shape();
    let channels = in_shape.channels;
    let area = (in_shape.height * in_shape.width) as f32;
    let mut out = FeatureTensor::stale(out_shape, ctx.poison);
    let mut mask_out = UpdateMask::all_false(in_shape.batch, 1, 1);

    for b in 0..in_shape.batch {
        let mut any = false;
        let mut sums = vec![0.0f32; channels];
        for y in 0..in_shape.height {
            for x in 0..in_shape.width {
                if !mask_in.get(b, y, x) {
                    continue;
                }
                any = true;
                let px = delta_in.pixel(b, y, x);
                for c in 0..channels {
                    sums[c] += px[c];
                }
            }
        }
        if any {
            mask_out.set(b, 0, 0, true);
            for c in 0..channels {
                out.set(b, 0, 0, c, sums[c] / area);
            }
        }
    }
    Ok((out, mask_out))
}
