//! Sparse spatial upsampling. Linear and stateless: an output pixel is
//! active iff any source pixel contributing to it is active, and inactive
//! sources contribute zero (their propagated delta is zero by definition,
//! and their buffer contents are never read).

use crate::error::{EngineError, Result};
use crate::mask::UpdateMask;
use crate::tensor::{FeatureTensor, Shape};

use super::{check_tensor_mask_pair, ExecContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsampleMode {
    Nearest,
    Bilinear,
}

impl UpsampleMode {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "nearest" => UpsampleMode::Nearest,
            "bilinear" => UpsampleMode::Bilinear,
            other => {
                return Err(EngineError::InvalidParameter(format!("unknown upsample mode '{other}'")))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            UpsampleMode::Nearest => "nearest",
            UpsampleMode::Bilinear => "bilinear",
        }
    }
}

pub fn sparse_upsample(
    delta_in: &FeatureTensor,
    mask_in: &UpdateMask,
    factor: usize,
    mode: UpsampleMode,
    ctx: &ExecContext,
) -> Result<(FeatureTensor, UpdateMask)> {
    check_tensor_mask_pair(delta_in, mask_in, "sparse_upsample input")?;
    if factor == 0 {
        return Err(EngineError::InvalidParameter("upsample factor must be >= 1".into()));
    }
    let in_shape = delta_in.shape();
    let out_shape = Shape::new(
        in_shape.batch,
        in_shape.height * factor,
        in_shape.width * factor,
        in_shape.channels,
    );
    let mut out = FeatureTensor::stale(out_shape, ctx.poison);
    let mut mask_out = UpdateMask::all_false(out_shape.batch, out_shape.height, out_shape.width);

    match mode {
        UpsampleMode::Nearest => {
            for b in 0..out_shape.batch {
                for oy in 0..out_shape.height {
                    let sy = oy / factor;
                    for ox in 0..out_shape.width {
                        let sx = ox / factor;
                        if mask_in.get(b, sy, sx) {
                            mask_out.set(b, oy, ox, true);
                            let src = delta_in.pixel(b, sy, sx);
                            out.pixel_mut(b, oy, ox).copy_from_slice(src);
                        }
                    }
                }
            }
        }
        UpsampleMode::Bilinear => {
            let channels = in_shape.channels;
            let f = factor as f32;
            for b in 0..out_shape.batch {
                for oy in 0..out_shape.height {
                    let src_y = (oy as f32 + 0.5) / f - 0.5;
                    let y0 = src_y.floor();
                    let wy1 = src_y - y0;
                    let y0c = (y0.max(0.0) as usize).min(in_shape.height - 1);
                    let y1c = ((y0 + 1.0).max(0.0) as usize).min(in_shape.height - 1);
                    for ox in 0..out_shape.width {
                        let src_x = (ox as f32 + 0.5) / f - 0.5;
                        let x0 = src_x.floor();
                        let wx1 = src_x - x0;
                        let x0c = (x0.max(0.0) as usize).min(in_shape.width - 1);
                        let x1c = ((x0 + 1.0).max(0.0) as usize).min(in_shape.width - 1);
                        // Fixed tap order: (y0,x0) (y0,x1) (y1,x0) (y1,x1).
                        let taps = [
                            (y0c, x0c, (1.0 - wy1) * (1.0 - wx1)),
                            (y0c, x1c, (1.0 - wy1) * wx1),
                            (y1c, x0c, wy1 * (1.0 - wx1)),
                            (y1c, x1c, wy1 * wx1),
                        ];
                        let any_active = taps
                            .iter()
                            .any(|&(ty, tx, w)| w > 0.0 && mask_in.get(b, ty, tx));
                        if !any_active {
                            continue;
                        }
                        mask_out.set(b, oy, ox, true);
                        let base = out.pixel_offset(b, oy, ox);
                        for c in 0..channels {
                            let mut acc = 0.0f32;
                            for &(ty, tx, w) in &taps {
                                if mask_in.get(b, ty, tx) {
                                    acc += w * delta_in.at(b, ty, tx, c);
                                }
                            }
                            out.data_mut()[base + c] = acc;
                        }
                    }
                }
            }
        }
    }
    Ok((out, mask_out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_x2_replicates_single_pixel() {
        let shape = Shape::new(1, 3, 3, 2);
        let mut delta = FeatureTensor::zeros(shape);
        delta.set(0, 1, 1, 0, 2.5);
        delta.set(0, 1, 1, 1, -1.0);
        let mut mask = UpdateMask::all_false(1, 3, 3);
        mask.set(0, 1, 1, true);
        let (out, m) =
            sparse_upsample(&delta, &mask, 2, UpsampleMode::Nearest, &ExecContext::default()).unwrap();
        assert_eq!(m.count_true(), 4);
        for oy in 2..4 {
            for ox in 2..4 {
                assert!(m.get(0, oy, ox));
                assert_eq!(out.pixel(0, oy, ox), &[2.5, -1.0]);
            }
        }
    }

    #[test]
    fn empty_mask_stays_empty() {
        let shape = Shape::new(1, 4, 4, 1);
        let delta = FeatureTensor::zeros(shape);
        let mask = UpdateMask::all_false(1, 4, 4);
        for mode in [UpsampleMode::Nearest, UpsampleMode::Bilinear] {
            let (_, m) = sparse_upsample(&delta, &mask, 2, mode, &ExecContext::default()).unwrap();
            assert_eq!(m.count_true(), 0);
        }
    }

    #[test]
    fn factor_one_nearest_is_identity() {
        let shape = Shape::new(1, 2, 2, 1);
        let delta = FeatureTensor::from_vec(shape, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mask = UpdateMask::all_true(1, 2, 2);
        let (out, m) =
            sparse_upsample(&delta, &mask, 1, UpsampleMode::Nearest, &ExecContext::default()).unwrap();
        assert_eq!(out.data(), delta.data());
        assert_eq!(m.count_true(), 4);
    }
}
