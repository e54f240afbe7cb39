//! Synthetic models and videos: seeded random graphs covering every layer
//! kind, conv stacks, and fixed-camera test clips (static scenes, moving
//! objects, drift/jump pixels). Deterministic for a given seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{GraphBuilder, LayerKind, ModelGraph};
use crate::layers::{Activation, ConvParams, PoolKind, PoolParams, UpsampleMode};
use crate::manifest::{ManifestLayer, ModelManifest, Span};
use crate::tensor::{FeatureTensor, Shape};
use crate::tile::{ConvGeometry, TileSpec};

// He-style fan-in scaling: keeps activation variance roughly constant through
// deep relu stacks, so synthetic networks actually transmit input changes to
// their output.
fn uniform_weights(rng: &mut ChaCha8Rng, len: usize, fan_in: usize) -> Vec<f32> {
    let scale = (6.0 / fan_in as f32).sqrt();
    (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
}

#[allow(clippy::too_many_arguments)]
fn conv_kind(rng: &mut ChaCha8Rng, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, dilation: usize, padding: usize, groups: usize) -> LayerKind {
    let geometry = ConvGeometry::new(kernel, kernel, stride, dilation, padding);
    let in_cg = in_channels / groups;
    let len = out_channels * kernel * kernel * in_cg;
    let fan_in = kernel * kernel * in_cg;
    let params = ConvParams {
        in_channels,
        out_channels,
        geometry,
        groups,
        weights: uniform_weights(rng, len, fan_in),
        bias: Some(uniform_weights(rng, out_channels, fan_in)),
    };
    let tiles = TileSpec::default_for(&geometry);
    LayerKind::Conv { params, tiles }
}

const ACTIVATIONS: [Activation; 6] = [
    Activation::Relu,
    Activation::Relu6,
    Activation::LeakyRelu,
    Activation::Sigmoid,
    Activation::Swish,
    Activation::Identity,
];

/// Random DAG drawing from every supported layer kind: convolutions
/// (strided, dilated, grouped, depthwise), activations, pooling, upsampling,
/// affine, addition and concatenation, ending in the dense accumulator.
/// Draws 3 to 10 operations between input and output; all activation
/// thresholds are set to `epsilon_act` and the input layer to `epsilon_in`.
pub fn random_graph(seed: u64, epsilon_in: f32, epsilon_act: f32) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = [8usize, 12, 16, 24][rng.gen_range(0..4)];
    let w = [8usize, 12, 16, 24][rng.gen_range(0..4)];
    let c = [1usize, 2, 3, 4, 8][rng.gen_range(0..5)];
    let batch = if rng.gen_bool(0.15) { 2 } else { 1 };
    let shape = Shape::new(batch, h, w, c);
    let mut builder = GraphBuilder::new(&format!("random-{seed}"), shape, epsilon_in, 0);

    let op_count = rng.gen_range(3..=10usize);
    let mut last = 0usize;
    let mut produced: Vec<(usize, Shape)> = vec![(0, shape)];
    let mut cur = shape;
    for _ in 0..op_count {
        let choice = rng.gen_range(0..100u32);
        let added = match choice {
            // Convolution variants.
            0..=34 => {
                let kernel = match rng.gen_range(0..10u32) {
                    0..=1 => 1,
                    2..=8 => 3,
                    _ => 5,
                };
                let stride = if kernel > 1 && rng.gen_bool(0.2) { 2 } else { 1 };
                let dilation = if kernel == 3 && stride == 1 && rng.gen_bool(0.15) { 2 } else { 1 };
                let padding = if kernel == 1 { 0 } else { (kernel / 2) * dilation };
                let span = dilation * (kernel - 1) + 1;
                if cur.height + 2 * padding < span || cur.width + 2 * padding < span {
                    None
                } else {
                    let (groups, out_channels) = if cur.channels > 1 && rng.gen_bool(0.2) {
                        // depthwise
                        (cur.channels, cur.channels)
                    } else if cur.channels.is_multiple_of(2) && rng.gen_bool(0.1) {
                        (2, [2usize, 4, 8][rng.gen_range(0..3)])
                    } else {
                        (1, [2usize, 4, 8, 16][rng.gen_range(0..4)])
                    };
                    let kind =
                        conv_kind(&mut rng, cur.channels, out_channels, kernel, stride, dilation, padding, groups);
                    Some(builder.add(kind, &[last]).expect("valid conv"))
                }
            }
            // Fused activation + truncation.
            35..=59 => {
                let function = ACTIVATIONS[rng.gen_range(0..ACTIVATIONS.len())];
                Some(
                    builder
                        .add(LayerKind::Activation { function, epsilon: epsilon_act }, &[last])
                        .expect("valid activation"),
                )
            }
            // Pooling.
            60..=69 => {
                if cur.height >= 8 && cur.width >= 8 {
                    let kind = if rng.gen_bool(0.5) { PoolKind::Max } else { PoolKind::Avg };
                    let params =
                        PoolParams { kind, geometry: ConvGeometry::new(2, 2, 2, 1, 0) };
                    Some(builder.add(LayerKind::Pool { params }, &[last]).expect("valid pool"))
                } else {
                    None
                }
            }
            // Upsampling.
            70..=76 => {
                if cur.height <= 32 && cur.width <= 32 {
                    let mode =
                        if rng.gen_bool(0.5) { UpsampleMode::Nearest } else { UpsampleMode::Bilinear };
                    Some(
                        builder
                            .add(LayerKind::Upsample { factor: 2, mode }, &[last])
                            .expect("valid upsample"),
                    )
                } else {
                    None
                }
            }
            // Channel-wise affine (unfused batch norm).
            77..=84 => {
                let scale: Vec<f32> = (0..cur.channels).map(|_| rng.gen_range(0.5..1.5f32)).collect();
                let shift: Vec<f32> = (0..cur.channels).map(|_| rng.gen_range(-0.2..0.2f32)).collect();
                Some(builder.add(LayerKind::Affine { scale, shift }, &[last]).expect("valid affine"))
            }
            // Skip-connection addition.
            85..=92 => {
                let candidates: Vec<usize> = produced
                    .iter()
                    .filter(|(i, s)| *i != last && *s == cur)
                    .map(|(i, _)| *i)
                    .collect();
                if candidates.is_empty() {
                    None
                } else {
                    let other = candidates[rng.gen_range(0..candidates.len())];
                    Some(builder.add(LayerKind::Add, &[last, other]).expect("valid add"))
                }
            }
            // Concatenation.
            _ => {
                let candidates: Vec<usize> = produced
                    .iter()
                    .filter(|(_, s)| s.spatial() == cur.spatial() && s.channels + cur.channels <= 32)
                    .map(|(i, _)| *i)
                    .collect();
                if candidates.is_empty() {
                    None
                } else {
                    let other = candidates[rng.gen_range(0..candidates.len())];
                    Some(builder.add(LayerKind::Concat, &[last, other]).expect("valid concat"))
                }
            }
        };
        // Infeasible draws fall back to a cheap activation so the graph still
        // reaches its drawn op count.
        let idx = added.unwrap_or_else(|| {
            builder
                .add(
                    LayerKind::Activation { function: Activation::LeakyRelu, epsilon: epsilon_act },
                    &[last],
                )
                .expect("valid fallback activation")
        });
        cur = builder.layer_shape(idx);
        produced.push((idx, cur));
        last = idx;
    }
    // Occasionally end with the squeeze-style global pooling.
    if rng.gen_bool(0.15) {
        let params =
            PoolParams { kind: PoolKind::GlobalAvg, geometry: ConvGeometry::new(1, 1, 1, 1, 0) };
        last = builder.add(LayerKind::Pool { params }, &[last]).expect("valid global pool");
    }
    builder.add(LayerKind::Output, &[last]).expect("valid output");
    builder.build().expect("random graph is valid by construction")
}

/// Straight stack: `depth` x (3x3 conv + relu truncation), constant channel
/// width. The workhorse model for sparsity and benchmark scenarios.
pub fn conv_stack(
    seed: u64,
    shape: Shape,
    channels: usize,
    depth: usize,
    epsilon_in: f32,
    dilation_radius: usize,
    epsilon_act: f32,
) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut builder = GraphBuilder::new("conv-stack", shape, epsilon_in, dilation_radius);
    let mut last = 0;
    let mut in_ch = shape.channels;
    for _ in 0..depth {
        let kind = conv_kind(&mut rng, in_ch, channels, 3, 1, 1, 1, 1);
        last = builder.add(kind, &[last]).expect("valid conv");
        last = builder
            .add(LayerKind::Activation { function: Activation::Relu, epsilon: epsilon_act }, &[last])
            .expect("valid activation");
        in_ch = channels;
    }
    builder.add(LayerKind::Output, &[last]).expect("valid output");
    builder.build().expect("conv stack is valid")
}

/// Same stack as [`conv_stack`] but expressed as manifest + weight blob, for
/// exercising the loader and the command-line surface.
pub fn conv_stack_manifest(
    seed: u64,
    shape: Shape,
    channels: usize,
    depth: usize,
    epsilon_in: f32,
    dilation_radius: usize,
    epsilon_act: f32,
) -> (ModelManifest, Vec<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blob = Vec::new();
    let mut layers = vec![ManifestLayer::Input { epsilon: epsilon_in, dilation_radius }];
    let mut last = 0usize;
    let mut in_ch = shape.channels;
    for _ in 0..depth {
        let fan_in = 9 * in_ch;
        let wlen = channels * 9 * in_ch;
        let w = uniform_weights(&mut rng, wlen, fan_in);
        let b = uniform_weights(&mut rng, channels, fan_in);
        let weights = Span { offset: blob.len(), len: wlen };
        blob.extend_from_slice(&w);
        let bias = Span { offset: blob.len(), len: channels };
        blob.extend_from_slice(&b);
        layers.push(ManifestLayer::Conv {
            inputs: vec![last],
            out_channels: channels,
            kernel: [3, 3],
            stride: 1,
            dilation: 1,
            padding: 1,
            groups: 1,
            weights,
            bias: Some(bias),
            tile: None,
        });
        last = layers.len() - 1;
        layers.push(ManifestLayer::Activation {
            inputs: vec![last],
            function: "relu".into(),
            epsilon: epsilon_act,
        });
        last = layers.len() - 1;
        in_ch = channels;
    }
    layers.push(ManifestLayer::Output { inputs: vec![last] });
    let manifest = ModelManifest {
        name: "conv-stack".into(),
        format_version: crate::manifest::MANIFEST_FORMAT_VERSION,
        input_shape: [shape.batch, shape.height, shape.width, shape.channels],
        weights: "weights.bin".into(),
        layers,
    };
    (manifest, blob)
}

/// Frames of a static scene with an `object x object` bright square moving
/// one pixel per frame along a diagonal, bouncing off the borders. The
/// background is exactly constant between frames.
pub fn moving_square_video(shape: Shape, frames: usize, object: usize, amplitude: f32) -> Vec<FeatureTensor> {
    let mut base = FeatureTensor::zeros(shape);
    for b in 0..shape.batch {
        for y in 0..shape.height {
            for x in 0..shape.width {
                for c in 0..shape.channels {
                    let v = 0.2 * ((y as f32 * 0.7 + c as f32).sin() + (x as f32 * 0.3).cos());
                    base.set(b, y, x, c, v);
                }
            }
        }
    }
    let max_y = shape.height.saturating_sub(object).max(1);
    let max_x = shape.width.saturating_sub(object).max(1);
    (0..frames)
        .map(|i| {
            let mut f = base.clone();
            let oy = bounce(i, max_y);
            let ox = bounce(i, max_x);
            for b in 0..shape.batch {
                for dy in 0..object.min(shape.height - oy) {
                    for dx in 0..object.min(shape.width - ox) {
                        for c in 0..shape.channels {
                            let v = amplitude * (1.0 + ((dy * 7 + dx * 3 + c) as f32 * 0.37).sin());
                            f.set(b, oy + dy, ox + dx, c, v);
                        }
                    }
                }
            }
            f
        })
        .collect()
}

fn bounce(i: usize, limit: usize) -> usize {
    let period = 2 * limit;
    let p = i % period.max(1);
    if p < limit {
        p
    } else {
        period - p - 1
    }
}

/// Independent uniform noise in [-amplitude, amplitude] per frame.
pub fn random_video(seed: u64, shape: Shape, frames: usize, amplitude: f32) -> Vec<FeatureTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..frames)
        .map(|_| {
            let data =
                (0..shape.len()).map(|_| rng.gen_range(-amplitude..amplitude)).collect::<Vec<_>>();
            FeatureTensor::from_vec(shape, data).expect("matching length")
        })
        .collect()
}

/// Static base scene plus per-frame sensor noise, plus an `object`-sized
/// strong moving patch. Models the fixed-camera regime where thresholds must
/// suppress noise but keep motion.
pub fn noisy_motion_video(
    seed: u64,
    shape: Shape,
    frames: usize,
    noise: f32,
    motion_amplitude: f32,
    object: usize,
) -> Vec<FeatureTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f32> = (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0f32)).collect();
    let max_y = shape.height.saturating_sub(object).max(1);
    let max_x = shape.width.saturating_sub(object).max(1);
    (0..frames)
        .map(|i| {
            let mut f = FeatureTensor::from_vec(
                shape,
                base.iter().map(|&v| v + rng.gen_range(-noise..noise.max(1e-9))).collect(),
            )
            .expect("matching length");
            let oy = bounce(i, max_y);
            let ox = bounce(i, max_x);
            for b in 0..shape.batch {
                for dy in 0..object {
                    for dx in 0..object {
                        for c in 0..shape.channels {
                            f.set(b, oy + dy, ox + dx, c, motion_amplitude);
                        }
                    }
                }
            }
            f
        })
        .collect()
}

/// One pixel drifts by `drift` every frame and additionally jumps by `jump`
/// every `jump_every` frames; everything else stays exactly constant.
pub fn drift_jump_video(
    shape: Shape,
    frames: usize,
    pixel: (usize, usize),
    drift: f32,
    jump: f32,
    jump_every: usize,
) -> Vec<FeatureTensor> {
    let base = FeatureTensor::zeros(shape);
    let mut value = 0.0f32;
    (0..frames)
        .map(|i| {
            if i > 0 {
                value += drift;
                if i % jump_every == 0 {
                    value += jump;
                }
            }
            let mut f = base.clone();
            for c in 0..shape.channels {
                f.set(0, pixel.0, pixel.1, c, value);
            }
            f
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_graph_is_deterministic() {
        let a = random_graph(7, 0.0, 0.0);
        let b = random_graph(7, 0.0, 0.0);
        assert_eq!(a.layers().len(), b.layers().len());
        for (x, y) in a.layers().iter().zip(b.layers()) {
            assert_eq!(x.output_shape, y.output_shape);
            assert_eq!(x.kind.name(), y.kind.name());
        }
    }

    #[test]
    fn random_graphs_cover_kinds() {
        let mut seen = std::collections::HashSet::new();
        for seed in 0..60 {
            for l in random_graph(seed, 0.0, 0.0).layers() {
                seen.insert(l.kind.name());
            }
        }
        for kind in ["input", "conv", "activation", "pool", "upsample", "affine", "add", "concat", "output"] {
            assert!(seen.contains(kind), "kind {kind} never generated");
        }
    }

    #[test]
    fn moving_square_background_is_static() {
        let shape = Shape::new(1, 16, 16, 1);
        let v = moving_square_video(shape, 3, 4, 2.0);
        let mut changed = 0;
        for (a, b) in v[1].data().iter().zip(v[2].data()) {
            if a != b {
                changed += 1;
            }
        }
        // Only the square's old and new footprints change.
        assert!(changed > 0 && changed <= 2 * 4 * 5);
    }

    #[test]
    fn drift_jump_sequence_shape() {
        let shape = Shape::new(1, 8, 8, 1);
        let v = drift_jump_video(shape, 10, (3, 3), 0.01, 1.0, 5);
        assert_eq!(v.len(), 10);
        assert_eq!(v[0].at(0, 3, 3, 0), 0.0);
        assert!((v[1].at(0, 3, 3, 0) - 0.01).abs() < 1e-6);
        assert!(v[5].at(0, 3, 3, 0) > 1.0);
    }
}
