//! Fused activation and truncation.
//!
//! Activation functions are nonlinear, so a delta cannot pass through them
//! directly: the op keeps the accumulated input and the truncated-but-pending
//! input per pixel and emits the exact output difference. Withheld updates
//! accumulate in the truncated buffer, which is what makes truncation
//! lossless over time.

use crate::error::{EngineError, Result};
use crate::mask::UpdateMask;
use crate::tensor::FeatureTensor;

use super::{check_tensor_mask_pair, ExecContext, LayerState};

use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Relu6,
    LeakyRelu,
    Sigmoid,
    Swish,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(&self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Relu6 => x.clamp(0.0, 6.0),
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    0.01 * x
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Swish => x / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "relu" => Activation::Relu,
            "relu6" => Activation::Relu6,
            "leaky_relu" | "leaky-relu" => Activation::LeakyRelu,
            "sigmoid" => Activation::Sigmoid,
            "swish" => Activation::Swish,
            "identity" => Activation::Identity,
            other => {
                return Err(EngineError::InvalidParameter(format!("unknown activation '{other}'")))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Relu6 => "relu6",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Swish => "swish",
            Activation::Identity => "identity",
        }
    }
}

/// For each active input pixel, computes the candidate output delta
/// `f(accumulated + truncated + delta) - f(accumulated)` per channel and
/// either emits it (updating the accumulated buffer, clearing the truncated
/// buffer) or withholds it when its max-norm stays below `epsilon` (adding
/// the delta onto the truncated buffer). Inactive pixels pass through
/// untouched.
///
/// A negative `epsilon` is the dense-mode sentinel: never truncate, always
/// update. On the first frame the buffers are being initialized: the emitted
/// value is the plain activation of the dense input (the downstream baseline
/// is zero, and f(0) is nonzero for sigmoid) and nothing is truncated.
pub fn activate_truncate(
    delta_in: &FeatureTensor,
    mask_in: &UpdateMask,
    state: &mut LayerState,
    epsilon: f32,
    function: Activation,
    first_frame: bool,
    ctx: &ExecContext,
) -> Result<(FeatureTensor, UpdateMask)> {
    check_tensor_mask_pair(delta_in, mask_in, "activate_truncate input")?;
    if state.shape() != delta_in.shape() {
        return Err(EngineError::ShapeMismatch(format!(
            "activate_truncate: state {} vs input {}",
            state.shape(),
            delta_in.shape()
        )));
    }
    if state.truncated.is_none() {
        return Err(EngineError::MissingState(
            "activate_truncate: state lacks a truncated-values buffer".into(),
        ));
    }
    state.expect_ready("activate_truncate", first_frame)?;

    let shape = delta_in.shape();
    let (b, h, w) = shape.spatial();
    let channels = shape.channels;
    let row_len = w * channels;
    let rows = b * h;

    let mut out = FeatureTensor::stale(shape, ctx.poison);
    let mut mask_out = UpdateMask::all_false(b, h, w);
    let trunc = state.truncated.as_mut().expect("checked above");

    let process_row = |out_row: &mut [f32],
                       mask_out_row: &mut [u8],
                       acc_row: &mut [f32],
                       trunc_row: &mut [f32],
                       delta_row: &[f32],
                       mask_in_row: &[u8]| {
        for x in 0..w {
            if mask_in_row[x] == 0 {
                continue;
            }
            let lo = x * channels;
            let hi = lo + channels;
            if first_frame {
                for i in lo..hi {
                    let s = delta_row[i];
                    out_row[i] = function.apply(s);
                    acc_row[i] = s;
                    trunc_row[i] = 0.0;
                }
                mask_out_row[x] = 1;
                continue;
            }
            // Candidate delta; the (acc + trunc) + delta grouping keeps
            // acc + trunc bit-identical to the never-truncated running sum.
            let mut max_abs = 0.0f32;
            for i in lo..hi {
                let s = (acc_row[i] + trunc_row[i]) + delta_row[i];
                let cand = function.apply(s) - function.apply(acc_row[i]);
                out_row[i] = cand;
                max_abs = max_abs.max(cand.abs());
            }
            if epsilon >= 0.0 && max_abs < epsilon {
                // Withhold: keep the pending change, leave the output stale.
                for i in lo..hi {
                    trunc_row[i] += delta_row[i];
                }
                if ctx.poison {
                    out_row[lo..hi].fill(f32::NAN);
                }
            } else {
                for i in lo..hi {
                    acc_row[i] = (acc_row[i] + trunc_row[i]) + delta_row[i];
                    trunc_row[i] = 0.0;
                }
                mask_out_row[x] = 1;
            }
        }
    };

    if let Some(pool) = ctx.pool.clone() {
        pool.install(|| {
            out.data_mut()
                .par_chunks_mut(row_len)
                .zip(mask_out.bytes_mut().par_chunks_mut(w))
                .zip(state.accumulated.data_mut().par_chunks_mut(row_len))
                .zip(trunc.data_mut().par_chunks_mut(row_len))
                .zip(delta_in.data().par_chunks(row_len))
                .zip(mask_in.bytes().par_chunks(w))
                .for_each(|(((((o, mo), a), t), d), mi)| process_row(o, mo, a, t, d, mi));
        });
    } else {
        let mut o_it = out.data_mut().chunks_mut(row_len);
        let mut a_it = state.accumulated.data_mut().chunks_mut(row_len);
        let mut t_it = trunc.data_mut().chunks_mut(row_len);
        let mut mo_it = mask_out.bytes_mut().chunks_mut(w);
        let d_all = delta_in.data();
        for r in 0..rows {
            process_row(
                o_it.next().unwrap(),
                mo_it.next().unwrap(),
                a_it.next().unwrap(),
                t_it.next().unwrap(),
                &d_all[r * row_len..(r + 1) * row_len],
                mask_in.row(r / h, r % h),
            );
        }
    }

    if first_frame {
        state.initialized = true;
    }
    Ok((out, mask_out))
}
