//! Every sparse layer operation checked against its dense oracle: the value
//! at active output pixels must equal the dense computation applied to the
//! dense-equivalent delta (inactive pixels as zero).

use delta_infer_core::layers::{
    activate_truncate, dense_accumulate, sparse_add, sparse_affine, sparse_concat, sparse_conv2d,
    sparse_pool, sparse_upsample, Activation, ConvParams, DispatchConfig, ExecContext, LayerState,
    PoolKind, PoolParams, UpsampleMode,
};
use delta_infer_core::mask::{mask_dilate_radius, UpdateMask};
use delta_infer_core::oracle::{
    dense_conv2d, dense_conv2d_nobias, dense_pool, dense_upsample,
};
use delta_infer_core::stats::LayerStats;
use delta_infer_core::tensor::{FeatureTensor, Shape};
use delta_infer_core::tile::{ConvGeometry, TileSpec};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ctx() -> ExecContext {
    // Poisoning on: any read of a masked-off pixel surfaces as NaN.
    ExecContext::default().poisoned(true)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape, amp: f32) -> FeatureTensor {
    let data = (0..shape.len()).map(|_| rng.gen_range(-amp..amp)).collect();
    FeatureTensor::from_vec(shape, data).unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, b: usize, h: usize, w: usize, density: f64) -> UpdateMask {
    let mut m = UpdateMask::all_false(b, h, w);
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                if rng.gen_bool(density) {
                    m.set(bi, y, x, true);
                }
            }
        }
    }
    m
}

/// The dense-equivalent delta: active pixels keep their values, inactive
/// pixels are zero.
fn dense_equiv(delta: &FeatureTensor, mask: &UpdateMask) -> FeatureTensor {
    let shape = delta.shape();
    let mut out = FeatureTensor::zeros(shape);
    let (b, h, w) = shape.spatial();
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                if mask.get(bi, y, x) {
                    out.pixel_mut(bi, y, x).copy_from_slice(delta.pixel(bi, y, x));
                }
            }
        }
    }
    out
}

/// Applies the mask to `delta` (NaN elsewhere) so illegal reads are loud.
fn poisoned(delta: &FeatureTensor, mask: &UpdateMask) -> FeatureTensor {
    let shape = delta.shape();
    let mut out = FeatureTensor::stale(shape, true);
    let (b, h, w) = shape.spatial();
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                if mask.get(bi, y, x) {
                    out.pixel_mut(bi, y, x).copy_from_slice(delta.pixel(bi, y, x));
                }
            }
        }
    }
    out
}

fn assert_active_close(
    got: &FeatureTensor,
    mask: &UpdateMask,
    want: &FeatureTensor,
    tol: f32,
    what: &str,
) {
    let (b, h, w) = got.shape().spatial();
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                if !mask.get(bi, y, x) {
                    continue;
                }
                for (c, (g, e)) in got.pixel(bi, y, x).iter().zip(want.pixel(bi, y, x)).enumerate() {
                    assert!(
                        (g - e).abs() <= tol,
                        "{what}: mismatch at ({bi},{y},{x},{c}): got {g}, want {e}"
                    );
                }
            }
        }
    }
}

fn conv_cases() -> Vec<ConvParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut make = |in_ch: usize, out_ch: usize, k: usize, s: usize, d: usize, p: usize, g: usize| {
        let in_cg = in_ch / g;
        let len = out_ch * k * k * in_cg;
        let scale = 1.0 / ((k * k * in_cg) as f32).sqrt();
        ConvParams {
            in_channels: in_ch,
            out_channels: out_ch,
            geometry: ConvGeometry::new(k, k, s, d, p),
            groups: g,
            weights: (0..len).map(|_| rng.gen_range(-scale..scale)).collect(),
            bias: Some((0..out_ch).map(|_| rng.gen_range(-0.5..0.5)).collect()),
        }
    };
    vec![
        make(1, 1, 3, 1, 1, 1, 1),
        make(3, 8, 3, 1, 1, 1, 1),
        make(4, 6, 3, 2, 1, 1, 1),
        make(2, 4, 3, 1, 2, 2, 1),
        make(3, 5, 1, 1, 1, 0, 1),
        make(4, 4, 3, 1, 1, 1, 4), // depthwise
        make(6, 12, 3, 1, 1, 1, 6), // depthwise, multiplier 2
        make(4, 8, 3, 1, 1, 1, 2), // grouped
        make(2, 3, 5, 1, 1, 2, 1),
    ]
}

#[test]
fn sparse_conv_matches_dense_oracle_on_random_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (ci, params) in conv_cases().iter().enumerate() {
        for density in [0.03, 0.2, 0.7, 1.0] {
            let shape = Shape::new(1, 11, 13, params.in_channels);
            let delta = random_tensor(&mut rng, shape, 1.0);
            let mask = if density == 1.0 {
                UpdateMask::all_true(1, 11, 13)
            } else {
                random_mask(&mut rng, 1, 11, 13, density)
            };
            let tiles = TileSpec::default_for(&params.geometry);
            let mut stats = LayerStats::new(0, "conv");
            let (got, mask_out) = sparse_conv2d(
                &poisoned(&delta, &mask),
                &mask,
                params,
                &tiles,
                false,
                &ctx(),
                &mut stats,
            )
            .unwrap();
            let want = dense_conv2d_nobias(&dense_equiv(&delta, &mask), params).unwrap();
            assert_active_close(&got, &mask_out, &want, 1e-5, &format!("case {ci} d={density}"));
            assert!(stats.mac_performed <= stats.mac_dense_equivalent, "case {ci}");
        }
    }
}

#[test]
fn sparse_conv_first_frame_equals_biased_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for params in conv_cases() {
        let shape = Shape::new(1, 10, 10, params.in_channels);
        let frame = random_tensor(&mut rng, shape, 1.0);
        let mask = UpdateMask::all_true(1, 10, 10);
        let tiles = TileSpec::default_for(&params.geometry);
        let mut stats = LayerStats::new(0, "conv");
        let (got, mask_out) =
            sparse_conv2d(&frame, &mask, &params, &tiles, true, &ctx(), &mut stats).unwrap();
        let want = dense_conv2d(&frame, &params).unwrap();
        // Same arithmetic order: first frame agrees bit for bit.
        assert_eq!(got.data(), want.data());
        assert_eq!(mask_out.count_true(), mask_out.bytes().len());
    }
}

#[test]
fn dispatch_paths_are_bit_identical() {
    // Force the same tile through the very-sparse and the dense path; the
    // fixed accumulation order makes the outputs bit-identical.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for params in conv_cases().iter().filter(|p| !p.per_pixel_kernel()) {
        let shape = Shape::new(1, 12, 12, params.in_channels);
        let delta = random_tensor(&mut rng, shape, 1.0);
        for count in 1..=8 {
            let mask = {
                let mut m = UpdateMask::all_false(1, 12, 12);
                let mut placed = 0;
                while placed < count {
                    let (y, x) = (rng.gen_range(0..12), rng.gen_range(0..12));
                    if !m.get(0, y, x) {
                        m.set(0, y, x, true);
                        placed += 1;
                    }
                }
                m
            };
            let tiles = TileSpec::default_for(&params.geometry);
            let all_sparse = ExecContext::default()
                .poisoned(true)
                .dispatched(DispatchConfig { very_sparse_max: usize::MAX });
            let all_dense = ExecContext::default()
                .poisoned(true)
                .dispatched(DispatchConfig { very_sparse_max: 0 });
            let input = poisoned(&delta, &mask);
            let mut s1 = LayerStats::new(0, "conv");
            let mut s2 = LayerStats::new(0, "conv");
            let (a, am) =
                sparse_conv2d(&input, &mask, params, &tiles, false, &all_sparse, &mut s1).unwrap();
            let (b, bm) =
                sparse_conv2d(&input, &mask, params, &tiles, false, &all_dense, &mut s2).unwrap();
            assert_eq!(am, bm);
            assert_eq!(s1.tiles_dense, 0);
            assert_eq!(s2.tiles_very_sparse, 0);
            let (bb, h, w) = am.spatial();
            for bi in 0..bb {
                for y in 0..h {
                    for x in 0..w {
                        if !am.get(bi, y, x) {
                            continue;
                        }
                        for c in 0..a.shape().channels {
                            assert_eq!(
                                a.at(bi, y, x, c).to_bits(),
                                b.at(bi, y, x, c).to_bits(),
                                "bit mismatch at ({y},{x},{c}) with {count} active"
                            );
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn conv_linearity_against_dense_reference() {
    // c(x + dx) = c(x) + c_sparse(dx) within float tolerance.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for params in conv_cases() {
        let shape = Shape::new(1, 9, 9, params.in_channels);
        let x = random_tensor(&mut rng, shape, 1.0);
        let dx = random_tensor(&mut rng, shape, 0.5);
        let sum = FeatureTensor::from_vec(
            shape,
            x.data().iter().zip(dx.data()).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
        let full = UpdateMask::all_true(1, 9, 9);
        let tiles = TileSpec::default_for(&params.geometry);
        let mut stats = LayerStats::new(0, "conv");
        let (sparse_dx, _) =
            sparse_conv2d(&dx, &full, &params, &tiles, false, &ctx(), &mut stats).unwrap();
        let dense_x = dense_conv2d(&x, &params).unwrap();
        let dense_sum = dense_conv2d(&sum, &params).unwrap();
        let scale = dense_sum.data().iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1.0);
        for ((a, b), c) in dense_x.data().iter().zip(sparse_dx.data()).zip(dense_sum.data()) {
            assert!(((a + b) - c).abs() / scale < 1e-4);
        }
    }
}

#[test]
fn activation_replay_is_lossless_until_threshold() {
    // Accumulated plus truncated equals the never-truncated running input at
    // every step of a random multi-frame replay. The identity is algebraic;
    // in floats the two sides associate sums differently, so the check allows
    // reassociation ulps (~1e-6 here) while any genuine loss would show up at
    // the truncation threshold's magnitude (0.6).
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for function in [Activation::Relu, Activation::Sigmoid, Activation::Swish, Activation::Relu6] {
        let shape = Shape::new(1, 4, 4, 3);
        let mut state = LayerState::with_truncation(shape);
        let mut shadow = FeatureTensor::zeros(shape); // running sum of arrived deltas
        let full = UpdateMask::all_true(1, 4, 4);
        for frame in 0..30 {
            let delta = random_tensor(&mut rng, shape, 0.4);
            let first = frame == 0;
            activate_truncate(&delta, &full, &mut state, 0.6, function, first, &ctx()).unwrap();
            for (s, d) in shadow.data_mut().iter_mut().zip(delta.data()) {
                *s += d;
            }
            let trunc = state.truncated.as_ref().unwrap();
            for ((a, t), s) in
                state.accumulated.data().iter().zip(trunc.data()).zip(shadow.data())
            {
                assert!(((a + t) - s).abs() <= 1e-4, "frame {frame}: {} vs {s}", a + t);
            }
        }
    }
}

#[test]
fn activation_catch_up_restores_dense_value() {
    // Sub-threshold drift for k frames; the crossing emission brings the
    // cumulative emitted output to the dense value of the total input.
    let shape = Shape::new(1, 1, 1, 1);
    let full = UpdateMask::all_true(1, 1, 1);
    let mut state = LayerState::with_truncation(shape);
    state.initialized = true;
    let drift = FeatureTensor::from_vec(shape, vec![0.4]).unwrap();
    let mut emitted_total = 0.0f32;
    let mut arrived_total = 0.0f32;
    for frame in 0..10 {
        let (out, mask) =
            activate_truncate(&drift, &full, &mut state, 1.0, Activation::Relu, false, &ctx())
                .unwrap();
        arrived_total += 0.4;
        if mask.get(0, 0, 0) {
            emitted_total += out.at(0, 0, 0, 0);
            // At every crossing the emitted sum equals relu of the arrived sum.
            assert!(
                (emitted_total - arrived_total.max(0.0)).abs() < 1e-6,
                "catch-up failed at frame {frame}"
            );
        }
    }
    assert!(emitted_total > 0.0, "threshold was never crossed");
}

#[test]
fn max_pool_two_frame_replay_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let shape = Shape::new(1, 8, 8, 2);
    let params = PoolParams { kind: PoolKind::Max, geometry: ConvGeometry::new(2, 2, 2, 1, 0) };
    let mut state = LayerState::values_only(shape);
    let frame0 = random_tensor(&mut rng, shape, 1.0);
    let full = UpdateMask::all_true(1, 8, 8);
    let (out0, _) =
        sparse_pool(&frame0, &full, Some(&mut state), &params, true, &ctx()).unwrap();
    assert_eq!(out0.data(), dense_pool(&frame0, &params).unwrap().data());

    // Sparse second frame: delta on a few pixels.
    let delta = random_tensor(&mut rng, shape, 0.8);
    let mask = random_mask(&mut rng, 1, 8, 8, 0.15);
    let (out1, mask1) =
        sparse_pool(&poisoned(&delta, &mask), &mask, Some(&mut state), &params, false, &ctx())
            .unwrap();
    let mut frame1 = frame0.clone();
    let equiv = dense_equiv(&delta, &mask);
    for (f, d) in frame1.data_mut().iter_mut().zip(equiv.data()) {
        *f += d;
    }
    let want0 = dense_pool(&frame0, &params).unwrap();
    let want1 = dense_pool(&frame1, &params).unwrap();
    let diff = FeatureTensor::from_vec(
        want1.shape(),
        want1.data().iter().zip(want0.data()).map(|(a, b)| a - b).collect(),
    )
    .unwrap();
    assert_active_close(&out1, &mask1, &diff, 1e-6, "maxpool delta");
}

#[test]
fn avg_pool_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shape = Shape::new(1, 8, 8, 3);
    for padding in [0usize, 1] {
        let params =
            PoolParams { kind: PoolKind::Avg, geometry: ConvGeometry::new(2, 2, 2, 1, padding) };
        let delta = random_tensor(&mut rng, shape, 1.0);
        let mask = random_mask(&mut rng, 1, 8, 8, 0.3);
        let (got, mask_out) =
            sparse_pool(&poisoned(&delta, &mask), &mask, None, &params, false, &ctx()).unwrap();
        let want = dense_pool(&dense_equiv(&delta, &mask), &params).unwrap();
        assert_active_close(&got, &mask_out, &want, 1e-6, "avgpool");
    }
}

#[test]
fn global_avg_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let shape = Shape::new(2, 6, 6, 4);
    let params =
        PoolParams { kind: PoolKind::GlobalAvg, geometry: ConvGeometry::new(1, 1, 1, 1, 0) };
    let delta = random_tensor(&mut rng, shape, 1.0);
    let mask = random_mask(&mut rng, 2, 6, 6, 0.2);
    let (got, mask_out) =
        sparse_pool(&poisoned(&delta, &mask), &mask, None, &params, false, &ctx()).unwrap();
    let want = dense_pool(&dense_equiv(&delta, &mask), &params).unwrap();
    assert_active_close(&got, &mask_out, &want, 1e-6, "global avg");
}

#[test]
fn bilinear_upsample_matches_dense_interpolation() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let shape = Shape::new(1, 6, 6, 2);
    let delta = random_tensor(&mut rng, shape, 1.0);
    // Pre-dilated source mask: every read branch's sources are valid data.
    let core = random_mask(&mut rng, 1, 6, 6, 0.15);
    let mask = mask_dilate_radius(&core, 1);
    let (got, mask_out) = sparse_upsample(
        &poisoned(&delta, &mask),
        &mask,
        2,
        UpsampleMode::Bilinear,
        &ctx(),
    )
    .unwrap();
    let want = dense_upsample(&dense_equiv(&delta, &mask), 2, UpsampleMode::Bilinear);
    assert_active_close(&got, &mask_out, &want, 1e-6, "bilinear");
    // Inactive output pixels correspond to all-inactive supports: the dense
    // interpolation of the dense-equivalent delta must be zero there.
    let (b, h, w) = mask_out.spatial();
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                if !mask_out.get(bi, y, x) {
                    for c in 0..want.shape().channels {
                        assert_eq!(want.at(bi, y, x, c), 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn nearest_upsample_matches_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let shape = Shape::new(1, 5, 7, 3);
    let delta = random_tensor(&mut rng, shape, 1.0);
    let mask = random_mask(&mut rng, 1, 5, 7, 0.4);
    for factor in [1usize, 2, 3] {
        let (got, mask_out) = sparse_upsample(
            &poisoned(&delta, &mask),
            &mask,
            factor,
            UpsampleMode::Nearest,
            &ctx(),
        )
        .unwrap();
        let want = dense_upsample(&dense_equiv(&delta, &mask), factor, UpsampleMode::Nearest);
        assert_active_close(&got, &mask_out, &want, 0.0, "nearest");
    }
}

#[test]
fn affine_matches_dense_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let shape = Shape::new(1, 6, 6, 4);
    let delta = random_tensor(&mut rng, shape, 1.0);
    let mask = random_mask(&mut rng, 1, 6, 6, 0.4);
    let scale: Vec<f32> = (0..4).map(|_| rng.gen_range(0.5..1.5)).collect();
    let shift = vec![0.0; 4];
    let (got, mask_out) =
        sparse_affine(&poisoned(&delta, &mask), &mask, &scale, &shift, false, &ctx()).unwrap();
    let equiv = dense_equiv(&delta, &mask);
    for y in 0..6 {
        for x in 0..6 {
            if mask_out.get(0, y, x) {
                for (c, s) in scale.iter().enumerate() {
                    assert_eq!(got.at(0, y, x, c), s * equiv.at(0, y, x, c));
                }
            }
        }
    }
}

#[test]
fn add_and_concat_match_dense_equivalents() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let shape = Shape::new(1, 6, 6, 2);
    let a = random_tensor(&mut rng, shape, 1.0);
    let b = random_tensor(&mut rng, shape, 1.0);
    let am = random_mask(&mut rng, 1, 6, 6, 0.3);
    let bm = random_mask(&mut rng, 1, 6, 6, 0.3);
    let (sum, sum_mask) =
        sparse_add(&poisoned(&a, &am), &am, &poisoned(&b, &bm), &bm, &ctx()).unwrap();
    let ae = dense_equiv(&a, &am);
    let be = dense_equiv(&b, &bm);
    let want = FeatureTensor::from_vec(
        shape,
        ae.data().iter().zip(be.data()).map(|(x, y)| x + y).collect(),
    )
    .unwrap();
    assert_active_close(&sum, &sum_mask, &want, 0.0, "add");

    let (cat, cat_mask) =
        sparse_concat(&[(&poisoned(&a, &am), &am), (&poisoned(&b, &bm), &bm)], &ctx()).unwrap();
    let want = delta_infer_core::oracle::dense_concat(&[&ae, &be]).unwrap();
    assert_active_close(&cat, &cat_mask, &want, 0.0, "concat");
}

#[test]
fn accumulate_three_frame_replay_matches_running_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let shape = Shape::new(1, 5, 5, 2);
    let mut state = LayerState::values_only(shape);
    let mut want = FeatureTensor::zeros(shape);
    for frame in 0..3 {
        let delta = random_tensor(&mut rng, shape, 1.0);
        let mask =
            if frame == 0 { UpdateMask::all_true(1, 5, 5) } else { random_mask(&mut rng, 1, 5, 5, 0.4) };
        let out =
            dense_accumulate(&poisoned(&delta, &mask), &mask, &mut state, frame == 0).unwrap();
        let equiv = dense_equiv(&delta, &mask);
        for (w, d) in want.data_mut().iter_mut().zip(equiv.data()) {
            *w += d;
        }
        assert_eq!(out.data(), want.data());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn oracle_superposition(seed in 0u64..500) {
        // dense(x + y) = dense_nobias(x) + dense(y), within relative tolerance.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = &conv_cases()[1];
        let shape = Shape::new(1, 7, 7, params.in_channels);
        let x = random_tensor(&mut rng, shape, 1.0);
        let y = random_tensor(&mut rng, shape, 1.0);
        let sum = FeatureTensor::from_vec(
            shape,
            x.data().iter().zip(y.data()).map(|(a, b)| a + b).collect(),
        ).unwrap();
        let lhs = dense_conv2d(&sum, params).unwrap();
        let rx = dense_conv2d_nobias(&x, params).unwrap();
        let ry = dense_conv2d(&y, params).unwrap();
        let scale = lhs.data().iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1.0);
        for ((a, b), c) in rx.data().iter().zip(ry.data()).zip(lhs.data()) {
            prop_assert!(((a + b) - c).abs() / scale < 1e-4);
        }
    }

    #[test]
    fn conv_stale_data_never_reaches_active_outputs(seed in 0u64..500, density in 0.05f64..0.5) {
        // NaN-poisoned inactive inputs never leak into active output pixels.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cases = conv_cases();
        let params = &cases[seed as usize % cases.len()];
        let shape = Shape::new(1, 10, 10, params.in_channels);
        let delta = random_tensor(&mut rng, shape, 1.0);
        let mask = random_mask(&mut rng, 1, 10, 10, density);
        let tiles = TileSpec::default_for(&params.geometry);
        let mut stats = LayerStats::new(0, "conv");
        let (out, mask_out) = sparse_conv2d(
            &poisoned(&delta, &mask), &mask, params, &tiles, false, &ctx(), &mut stats,
        ).unwrap();
        let (b, h, w) = mask_out.spatial();
        for bi in 0..b {
            for y in 0..h {
                for x in 0..w {
                    if mask_out.get(bi, y, x) {
                        for c in 0..out.shape().channels {
                            prop_assert!(out.at(bi, y, x, c).is_finite());
                        }
                    }
                }
            }
        }
    }
}
