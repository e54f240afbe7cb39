//! Delta generation: turns an absolute input frame into a sparse delta
//! against the last propagated input.

use crate::error::{EngineError, Result};
use crate::mask::{mask_dilate_radius, UpdateMask};
use crate::tensor::FeatureTensor;

use super::{check_tensor_mask_pair, ExecContext, LayerState};

/// Subtracts the last propagated input from `frame`, thresholds the result
/// per pixel with the max-norm over channels against `epsilon`, then dilates
/// the active mask by `dilation_radius`.
///
/// Pixels activated by dilation emit their own delta, which may be below the
/// threshold. The previous-input buffer is overwritten with the current frame
/// only at active pixels, so a truncated input change stays pending relative
/// to the last value the network actually saw.
///
/// On the first frame the state is zero-initialized: the whole frame is the
/// delta and every pixel is active.
pub fn delta_generate(
    frame: &FeatureTensor,
    prev_input: &mut LayerState,
    epsilon: f32,
    dilation_radius: usize,
    first_frame: bool,
    ctx: &ExecContext,
) -> Result<(FeatureTensor, UpdateMask)> {
    if frame.shape() != prev_input.shape() {
        return Err(EngineError::ShapeMismatch(format!(
            "delta_generate: frame {} vs state {}",
            frame.shape(),
            prev_input.shape()
        )));
    }
    if !frame.is_finite() {
        return Err(EngineError::NonFinite("delta_generate: frame contains NaN or infinity".into()));
    }
    prev_input.expect_ready("delta_generate", first_frame)?;
    let shape = frame.shape();
    let (b, h, w) = shape.spatial();

    if first_frame {
        prev_input.accumulated = frame.clone();
        prev_input.initialized = true;
        return Ok((frame.clone(), UpdateMask::all_true(b, h, w)));
    }

    // Pass 1: threshold |frame - prev| per pixel.
    let mut raw = UpdateMask::all_false(b, h, w);
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let cur = frame.pixel(bi, y, x);
                let prev = prev_input.accumulated.pixel(bi, y, x);
                let mut max_abs = 0.0f32;
                for (c, p) in cur.iter().zip(prev) {
                    max_abs = max_abs.max((c - p).abs());
                }
                if max_abs >= epsilon {
                    raw.set(bi, y, x, true);
                }
            }
        }
    }
    let mask = mask_dilate_radius(&raw, dilation_radius);

    // Pass 2: emit deltas and advance the propagated-input buffer at active
    // pixels only.
    let mut delta = FeatureTensor::stale(shape, ctx.poison);
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                if !mask.get(bi, y, x) {
                    continue;
                }
                let off = frame.pixel_offset(bi, y, x);
                let c = shape.channels;
                for i in 0..c {
                    let cur = frame.data()[off + i];
                    let prev = prev_input.accumulated.data()[off + i];
                    delta.data_mut()[off + i] = cur - prev;
                    prev_input.accumulated.data_mut()[off + i] = cur;
                }
            }
        }
    }
    check_tensor_mask_pair(&delta, &mask, "delta_generate output")?;
    Ok((delta, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn ctx() -> ExecContext {
        ExecContext::default()
    }

    #[test]
    fn first_frame_is_fully_active() {
        let shape = Shape::new(1, 4, 4, 2);
        let frame = FeatureTensor::from_vec(shape, (0..32).map(|i| i as f32).collect()).unwrap();
        let mut state = LayerState::values_only(shape);
        let (delta, mask) = delta_generate(&frame, &mut state, 0.3, 0, true, &ctx()).unwrap();
        assert_eq!(mask.count_true(), 16);
        assert_eq!(delta.data(), frame.data());
        assert_eq!(state.accumulated.data(), frame.data());
    }

    #[test]
    fn identical_frames_give_empty_mask() {
        let shape = Shape::new(1, 4, 4, 2);
        let frame = FeatureTensor::from_vec(shape, (0..32).map(|i| i as f32 * 0.1).collect()).unwrap();
        let mut state = LayerState::values_only(shape);
        delta_generate(&frame, &mut state, 0.3, 7, true, &ctx()).unwrap();
        let (_, mask) = delta_generate(&frame, &mut state, 0.3, 7, false, &ctx()).unwrap();
        assert_eq!(mask.count_true(), 0);
    }

    #[test]
    fn single_pixel_change_above_threshold() {
        // A +1.0 change with epsilon 0.3 activates exactly one pixel before
        // dilation, with delta +1.0 there; verified by a per-pixel scan.
        let shape = Shape::new(1, 6, 6, 1);
        let frame0 = FeatureTensor::zeros(shape);
        let mut state = LayerState::values_only(shape);
        delta_generate(&frame0, &mut state, 0.3, 0, true, &ctx()).unwrap();
        let mut frame1 = frame0.clone();
        frame1.set(0, 2, 3, 0, 1.0);
        let (delta, mask) = delta_generate(&frame1, &mut state, 0.3, 0, false, &ctx()).unwrap();
        assert_eq!(mask.count_true(), 1);
        for y in 0..6 {
            for x in 0..6 {
                let expected = frame1.at(0, y, x, 0) - frame0.at(0, y, x, 0);
                if expected.abs() >= 0.3 {
                    assert!(mask.get(0, y, x));
                    assert_eq!(delta.at(0, y, x, 0), expected);
                } else {
                    assert!(!mask.get(0, y, x));
                }
            }
        }
    }

    #[test]
    fn truncated_change_stays_pending() {
        let shape = Shape::new(1, 2, 2, 1);
        let mut state = LayerState::values_only(shape);
        let zero = FeatureTensor::zeros(shape);
        delta_generate(&zero, &mut state, 0.5, 0, true, &ctx()).unwrap();
        // Sub-threshold drift: no update, prev stays at the propagated value.
        let mut drift = zero.clone();
        drift.set(0, 0, 0, 0, 0.3);
        let (_, mask) = delta_generate(&drift, &mut state, 0.5, 0, false, &ctx()).unwrap();
        assert_eq!(mask.count_true(), 0);
        assert_eq!(state.accumulated.at(0, 0, 0, 0), 0.0);
        // Another 0.3 crosses the threshold relative to the last propagated
        // value and emits the full pending change.
        let mut more = zero.clone();
        more.set(0, 0, 0, 0, 0.6);
        let (delta, mask) = delta_generate(&more, &mut state, 0.5, 0, false, &ctx()).unwrap();
        assert_eq!(mask.count_true(), 1);
        assert_eq!(delta.at(0, 0, 0, 0), 0.6);
        assert_eq!(state.accumulated.at(0, 0, 0, 0), 0.6);
    }

    #[test]
    fn dilated_pixels_emit_subthreshold_deltas() {
        let shape = Shape::new(1, 5, 5, 1);
        let mut state = LayerState::values_only(shape);
        let zero = FeatureTensor::zeros(shape);
        delta_generate(&zero, &mut state, 0.5, 1, true, &ctx()).unwrap();
        let mut frame = zero.clone();
        frame.set(0, 2, 2, 0, 1.0); // above threshold
        frame.set(0, 2, 3, 0, 0.1); // below threshold, inside dilation ring
        let (delta, mask) = delta_generate(&frame, &mut state, 0.5, 1, false, &ctx()).unwrap();
        assert_eq!(mask.count_true(), 9);
        assert_eq!(delta.at(0, 2, 3, 0), 0.1);
        assert_eq!(state.accumulated.at(0, 2, 3, 0), 0.1);
    }

    #[test]
    fn non_finite_frame_is_rejected() {
        let shape = Shape::new(1, 2, 2, 1);
        let mut frame = FeatureTensor::zeros(shape);
        frame.set(0, 0, 0, 0, f32::NAN);
        let mut state = LayerState::values_only(shape);
        let r = delta_generate(&frame, &mut state, 0.3, 0, true, &ctx());
        assert!(matches!(r, Err(EngineError::NonFinite(_))));
    }
}
