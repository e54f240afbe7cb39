//! Per-pixel linear combinators: channel-wise affine (unfused batch norm),
//! addition of two branches, and channel concatenation.

use crate::error::{EngineError, Result};
use crate::mask::{mask_union, UpdateMask};
use crate::tensor::FeatureTensor;

use super::{check_tensor_mask_pair, ExecContext};

/// Channel-wise `scale * delta`, with `shift` added only on the first frame.
/// Like convolution biases, the shift is already contained in downstream
/// accumulated values from the dense frame onwards. The mask passes through
/// unchanged.
pub fn sparse_affine(
    delta_in: &FeatureTensor,
    mask_in: &UpdateMask,
    scale: &[f32],
    shift: &[f32],
    first_frame: bool,
    ctx: &ExecContext,
) -> Result<(FeatureTensor, UpdateMask)> {
    check_tensor_mask_pair(delta_in, mask_in, "sparse_affine input")?;
    let shape = delta_in.shape();
    if scale.len() != shape.channels || shift.len() != shape.channels {
        return Err(EngineError::ShapeMismatch(format!(
            "affine expects {} per-channel factors, got scale {} / shift {}",
            shape.channels,
            scale.len(),
            shift.len()
        )));
    }
    let (b, h, w) = shape.spatial();
    let mut out = FeatureTensor::stale(shape, ctx.poison);
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                if !mask_in.get(bi, y, x) {
                    continue;
                }
                let off = delta_in.pixel_offset(bi, y, x);
                for c in 0..shape.channels {
                    let mut v = scale[c] * delta_in.data()[off + c];
                    if first_frame {
                        v += shift[c];
                    }
                    out.data_mut()[off + c] = v;
                }
            }
        }
    }
    Ok((out, mask_in.clone()))
}

/// Addition of two delta branches. The result is active wherever either
/// operand is; an operand inactive at a pixel contributes zero there.
pub fn sparse_add(
    a_delta: &FeatureTensor,
    a_mask: &UpdateMask,
    b_delta: &FeatureTensor,
    b_mask: &UpdateMask,
    ctx: &ExecContext,
) -> Result<(FeatureTensor, UpdateMask)> {
    check_tensor_mask_pair(a_delta, a_mask, "sparse_add lhs")?;
    check_tensor_mask_pair(b_delta, b_mask, "sparse_add rhs")?;
    if a_delta.shape() != b_delta.shape() {
        return Err(EngineError::ShapeMismatch(format!(
            "sparse_add: {} vs {}",
            a_delta.shape(),
            b_delta.shape()
        )));
    }
    let shape = a_delta.shape();
    let (b, h, w) = shape.spatial();
    let mask = mask_union(a_mask, b_mask)?;
    let mut out = FeatureTensor::stale(shape, ctx.poison);
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let (ia, ib) = (a_mask.get(bi, y, x), b_mask.get(bi, y, x));
                if !ia && !ib {
                    continue;
                }
                let off = out.pixel_offset(bi, y, x);
                for c in 0..shape.channels {
                    let av = if ia { a_delta.data()[off + c] } else { 0.0 };
                    let bv = if ib { b_delta.data()[off + c] } else { 0.0 };
                    out.data_mut()[off + c] = av + bv;
                }
            }
        }
    }
    Ok((out, mask))
}

/// Channel concatenation. A concatenated pixel must be fully valid, so at
/// pixels active in the union but inactive in one input, that input's
/// channels are materialized as explicit zeros.
pub fn sparse_concat(
    inputs: &[(&FeatureTensor, &UpdateMask)],
    ctx: &ExecContext,
) -> Result<(FeatureTensor, UpdateMask)> {
    if inputs.is_empty() {
        return Err(EngineError::InvalidParameter("concat of zero inputs".into()));
    }
    let spatial = inputs[0].0.shape().spatial();
    let mut channels = 0;
    for (t, m) in inputs {
        check_tensor_mask_pair(t, m, "sparse_concat input")?;
        if t.shape().spatial() != spatial {
            return Err(EngineError::ShapeMismatch(format!(
                "concat spatial mismatch: {} vs {:?}",
                t.shape(),
                spatial
            )));
        }
        channels += t.shape().channels;
    }
    let mut mask = inputs[0].1.clone();
    for (_, m) in &inputs[1..] {
        mask = mask_union(&mask, m)?;
    }
    let shape = inputs[0].0.shape().with_channels(channels);
    let (b, h, w) = spatial;
    let mut out = FeatureTensor::stale(shape, ctx.poison);
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                if !mask.get(bi, y, x) {
                    continue;
                }
                let base = out.pixel_offset(bi, y, x);
                let mut co = 0;
                for (t, m) in inputs {
                    let tc = t.shape().channels;
                    if m.get(bi, y, x) {
                        let src = t.pixel(bi, y, x);
                        out.data_mut()[base + co..base + co + tc].copy_from_slice(src);
                    } else {
                        out.data_mut()[base + co..base + co + tc].fill(0.0);
                    }
                    co += tc;
                }
            }
        }
    }
    Ok((out, mask))
}
