//! Final dense accumulation: folds the sparse output delta onto the previous
//! dense output and hands back the full frame result.

use crate::error::{EngineError, Result};
use crate::mask::UpdateMask;
use crate::tensor::FeatureTensor;

use super::{check_tensor_mask_pair, LayerState};

/// Adds the delta onto the output buffer at active pixels and returns the
/// dense output for the frame. The state must be zero-initialized before the
/// first frame, which then writes the full dense result.
pub fn dense_accumulate(
    delta_in: &FeatureTensor,
    mask_in: &UpdateMask,
    output_state: &mut LayerState,
    first_frame: bool,
) -> Result<FeatureTensor> {
    check_tensor_mask_pair(delta_in, mask_in, "dense_accumulate input")?;
    if output_state.shape() != delta_in.shape() {
        return Err(EngineError::ShapeMismatch(format!(
            "dense_accumulate: state {} vs input {}",
            output_state.shape(),
            delta_in.shape()
        )));
    }
    output_state.expect_ready("dense_accumulate", first_frame)?;
    let (b, h, w) = delta_in.shape().spatial();
    let channels = delta_in.shape().channels;
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                if !mask_in.get(bi, y, x) {
                    continue;
                }
                let off = delta_in.pixel_offset(bi, y, x);
                for c in 0..channels {
                    output_state.accumulated.data_mut()[off + c] += delta_in.data()[off + c];
                }
            }
        }
    }
    if first_frame {
        output_state.initialized = true;
    }
    Ok(output_state.accumulated.clone())
}
