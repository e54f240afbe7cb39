//! Dense reference implementations of every layer kind.
//!
//! Intentionally naive (direct loops, no tiling, no masks, no state) so that
//! correctness is auditable by inspection; this is the ground truth for
//! equivalence, drift and tuner loss evaluation. Per-output accumulation
//! order matches the engine policy (kernel row, kernel column, input channel,
//! bias last) so that first frames agree to float precision.

use crate::error::{EngineError, Result};
use crate::graph::{LayerKind, ModelGraph};
use crate::layers::{Activation, ConvParams, PoolKind, PoolParams, UpsampleMode};
use crate::tensor::{FeatureTensor, Shape};

/// Stateless dense evaluation of the whole graph for one frame. Biases and
/// shifts are applied every frame; there are no masks and no truncation.
pub fn dense_run_frame(graph: &ModelGraph, frame: &FeatureTensor) -> Result<FeatureTensor> {
    if frame.shape() != graph.input_shape() {
        return Err(EngineError::ShapeMismatch(format!(
            "frame {} vs declared input {}",
            frame.shape(),
            graph.input_shape()
        )));
    }
    if !frame.is_finite() {
        return Err(EngineError::NonFinite("dense_run_frame: frame".into()));
    }
    let layers = graph.layers();
    let mut registry: Vec<Option<FeatureTensor>> = vec![None; layers.len()];
    let mut output = None;
    for (i, record) in layers.iter().enumerate() {
        let fetch = |idx: usize| registry[idx].as_ref().expect("topological order");
        let value = match &record.kind {
            LayerKind::Input { .. } => frame.clone(),
            LayerKind::Conv { params, .. } => dense_conv2d(fetch(record.inputs[0]), params)?,
            LayerKind::Activation { function, .. } => dense_activation(fetch(record.inputs[0]), *function),
            LayerKind::Pool { params } => dense_pool(fetch(record.inputs[0]), params)?,
            LayerKind::Upsample { factor, mode } => {
                dense_upsample(fetch(record.inputs[0]), *factor, *mode)
            }
            LayerKind::Affine { scale, shift } => {
                dense_affine(fetch(record.inputs[0]), scale, shift)?
            }
            LayerKind::Add => {
                let a = fetch(record.inputs[0]);
                let b = fetch(record.inputs[1]);
                if a.shape() != b.shape() {
                    return Err(EngineError::ShapeMismatch("dense add".into()));
                }
                let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
                FeatureTensor::from_vec(a.shape(), data)?
            }
            LayerKind::Concat => {
                let inputs: Vec<&FeatureTensor> = record.inputs.iter().map(|&i| fetch(i)).collect();
                dense_concat(&inputs)?
            }
            LayerKind::Output => {
                let v = fetch(record.inputs[0]).clone();
                output = Some(v.clone());
                v
            }
        };
        registry[i] = Some(value);
    }
    output.ok_or_else(|| EngineError::Manifest("graph has no output layer".into()))
}

/// Textbook direct convolution with stride, dilation, groups and zero
/// padding. Fixed accumulation order; bias added last.
pub fn dense_conv2d(x: &FeatureTensor, params: &ConvParams) -> Result<FeatureTensor> {
    params.validate()?;
    let in_shape = x.shape();
    let out_shape = params.output_shape(in_shape)?;
    let g = &params.geometry;
    let in_cg = params.group_in_channels();
    let out_cg = params.group_out_channels();
    let mut out = FeatureTensor::zeros(out_shape);
    for b in 0..out_shape.batch {
        for oy in 0..out_shape.height {
            let y_origin = g.tap_origin(oy);
            for ox in 0..out_shape.width {
                let x_origin = g.tap_origin(ox);
                let base = out.pixel_offset(b, oy, ox);
                for oc in 0..params.out_channels {
                    let group = oc / out_cg;
                    let wbase = oc * g.kernel_h * g.kernel_w * in_cg;
                    let cbase = group * in_cg;
                    let mut acc = 0.0f32;
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
                            let ioff = x.pixel_offset(b, iy as usize, ix as usize) + cbase;
                            let woff = wbase + (kr * g.kernel_w + kc) * in_cg;
                            acc = params.weights[woff..woff + in_cg]
                                .iter()
                                .zip(&x.data()[ioff..ioff + in_cg])
                                .fold(acc, |a, (w, v)| a + w * v);
                        }
                    }
                    if let Some(bias) = &params.bias {
                        acc += bias[oc];
                    }
                    out.data_mut()[base + oc] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// `dense_conv2d` with the bias term suppressed; used by superposition
/// checks, since conv(x + y) carries a single bias.
pub fn dense_conv2d_nobias(x: &FeatureTensor, params: &ConvParams) -> Result<FeatureTensor> {
    let unbiased = ConvParams { bias: None, ..params.clone() };
    dense_conv2d(x, &unbiased)
}

pub fn dense_activation(x: &FeatureTensor, function: Activation) -> FeatureTensor {
    let data = x.data().iter().map(|&v| function.apply(v)).collect();
    FeatureTensor::from_vec(x.shape(), data).expect("same length")
}

pub fn dense_affine(x: &FeatureTensor, scale: &[f32], shift: &[f32]) -> Result<FeatureTensor> {
    let shape = x.shape();
    if scale.len() != shape.channels || shift.len() != shape.channels {
        return Err(EngineError::ShapeMismatch("dense affine factors".into()));
    }
    let mut out = FeatureTensor::zeros(shape);
    for (i, &v) in x.data().iter().enumerate() {
        let c = i % shape.channels;
        out.data_mut()[i] = scale[c] * v + shift[c];
    }
    Ok(out)
}

pub fn dense_pool(x: &FeatureTensor, params: &PoolParams) -> Result<FeatureTensor> {
    let in_shape = x.shape();
    let out_shape = params.output_shape(in_shape)?;
    let mut out = FeatureTensor::zeros(out_shape);
    match params.kind {
        PoolKind::GlobalAvg => {
            let area = (in_shape.height * in_shape.width) as f32;
            for b in 0..in_shape.batch {
                let mut sums = vec![0.0f32; in_shape.channels];
                for y in 0..in_shape.height {
                    for xx in 0..in_shape.width {
                        let px = x.pixel(b, y, xx);
                        for c in 0..in_shape.channels {
                            sums[c] += px[c];
                        }
                    }
                }
                for c in 0..in_shape.channels {
                    out.set(b, 0, 0, c, sums[c] / area);
                }
            }
        }
        PoolKind::Max | PoolKind::Avg => {
            let g = &params.geometry;
            let area = (g.kernel_h * g.kernel_w) as f32;
            for b in 0..out_shape.batch {
                for oy in 0..out_shape.height {
                    let y_origin = g.tap_origin(oy);
                    for ox in 0..out_shape.width {
                        let x_origin = g.tap_origin(ox);
                        for c in 0..in_shape.channels {
                            let mut max = f32::NEG_INFINITY;
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
                                    let v = x.at(b, iy as usize, ix as usize, c);
                                    max = max.max(v);
                                    sum += v;
                                }
                            }
                            let v = if params.kind == PoolKind::Max { max } else { sum / area };
                            out.set(b, oy, ox, c, v);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn dense_upsample(x: &FeatureTensor, factor: usize, mode: UpsampleMode) -> FeatureTensor {
    let in_shape = x.shape();
    let out_shape = Shape::new(
        in_shape.batch,
        in_shape.height * factor,
        in_shape.width * factor,
        in_shape.channels,
    );
    let mut out = FeatureTensor::zeros(out_shape);
    match mode {
        UpsampleMode::Nearest => {
            for b in 0..out_shape.batch {
                for oy in 0..out_shape.height {
                    for ox in 0..out_shape.width {
                        let src = x.pixel(b, oy / factor, ox / factor);
                        out.pixel_mut(b, oy, ox).copy_from_slice(src);
                    }
                }
            }
        }
        UpsampleMode::Bilinear => {
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
                        let taps = [
                            (y0c, x0c, (1.0 - wy1) * (1.0 - wx1)),
                            (y0c, x1c, (1.0 - wy1) * wx1),
                            (y1c, x0c, wy1 * (1.0 - wx1)),
                            (y1c, x1c, wy1 * wx1),
                        ];
                        let base = out.pixel_offset(b, oy, ox);
                        for c in 0..in_shape.channels {
                            let mut acc = 0.0f32;
                            for &(ty, tx, w) in &taps {
                                acc += w * x.at(b, ty, tx, c);
                            }
                            out.data_mut()[base + c] = acc;
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn dense_concat(inputs: &[&FeatureTensor]) -> Result<FeatureTensor> {
    let spatial = inputs[0].shape().spatial();
    let channels: usize = inputs.iter().map(|t| t.shape().channels).sum();
    let (b, h, w) = spatial;
    let mut out = FeatureTensor::zeros(inputs[0].shape().with_channels(channels));
    for t in inputs {
        if t.shape().spatial() != spatial {
            return Err(EngineError::ShapeMismatch("dense concat".into()));
        }
    }
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let base = out.pixel_offset(bi, y, x);
                let mut co = 0;
                for t in inputs {
                    let tc = t.shape().channels;
                    out.data_mut()[base + co..base + co + tc].copy_from_slice(t.pixel(bi, y, x));
                    co += tc;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tile::ConvGeometry;

    #[test]
    fn identity_kernel_passes_through() {
        let params = ConvParams {
            in_channels: 1,
            out_channels: 1,
            geometry: ConvGeometry::new(1, 1, 1, 1, 0),
            groups: 1,
            weights: vec![1.0],
            bias: None,
        };
        let x = FeatureTensor::from_vec(Shape::new(1, 2, 2, 1), vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        let y = dense_conv2d(&x, &params).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn hand_computed_3x3_on_2x2_input() {
        // Input (1 channel):      kernel:
        //   [1 2]                   [1 0 2]
        //   [3 4]                   [0 1 0]
        //                           [3 0 4]
        // padding 1, stride 1 -> 2x2 output. Hand computation over in-bounds
        // taps, in(oy-1+kr, ox-1+kc):
        //   out(0,0) = 1*in(0,0) + 4*in(1,1)            = 1 + 16 = 17
        //   out(0,1) = 1*in(0,1) + 3*in(1,0)            = 2 + 9  = 11
        //   out(1,0) = 2*in(0,1) + 1*in(1,0)            = 4 + 3  = 7
        //   out(1,1) = 1*in(0,0) + 1*in(1,1)            = 1 + 4  = 5
        let params = ConvParams {
            in_channels: 1,
            out_channels: 1,
            geometry: ConvGeometry::new(3, 3, 1, 1, 1),
            groups: 1,
            weights: vec![1.0, 0.0, 2.0, 0.0, 1.0, 0.0, 3.0, 0.0, 4.0],
            bias: None,
        };
        let x = FeatureTensor::from_vec(Shape::new(1, 2, 2, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = dense_conv2d(&x, &params).unwrap();
        assert_eq!(y.data(), &[17.0, 11.0, 7.0, 5.0]);
    }

    #[test]
    fn zero_input_broadcasts_bias() {
        let params = ConvParams {
            in_channels: 2,
            out_channels: 3,
            geometry: ConvGeometry::new(3, 3, 1, 1, 1),
            groups: 1,
            weights: vec![0.5; 3 * 9 * 2],
            bias: Some(vec![1.0, -2.0, 0.25]),
        };
        let x = FeatureTensor::zeros(Shape::new(1, 4, 4, 2));
        let y = dense_conv2d(&x, &params).unwrap();
        for yy in 0..4 {
            for xx in 0..4 {
                assert_eq!(y.pixel(0, yy, xx), &[1.0, -2.0, 0.25]);
            }
        }
    }

    #[test]
    fn relu_of_negated_positive_is_zero() {
        let x = FeatureTensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.0, 0.0, -2.0]).unwrap();
        let y = dense_activation(&x, Activation::Relu);
        assert_eq!(y.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn deterministic_across_runs() {
        let params = ConvParams {
            in_channels: 3,
            out_channels: 4,
            geometry: ConvGeometry::new(3, 3, 2, 1, 1),
            groups: 1,
            weights: (0..4 * 9 * 3).map(|i| (i as f32 * 0.37).sin()).collect(),
            bias: Some(vec![0.1, 0.2, 0.3, 0.4]),
        };
        let x = FeatureTensor::from_vec(
            Shape::new(1, 9, 9, 3),
            (0..243).map(|i| (i as f32 * 0.11).cos()).collect(),
        )
        .unwrap();
        let a = dense_conv2d(&x, &params).unwrap();
        let b = dense_conv2d(&x, &params).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
