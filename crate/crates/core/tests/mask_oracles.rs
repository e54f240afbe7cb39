//! Mask arithmetic checked against independent oracles: brute-force
//! receptive-field scans, per-pixel distance scans, and the dense-convolution
//! support characterization.

use delta_infer_core::mask::{mask_dilate_conv, mask_dilate_radius, mask_union, UpdateMask};
use delta_infer_core::oracle::dense_conv2d;
use delta_infer_core::tensor::{FeatureTensor, Shape};
use delta_infer_core::tile::{input_window, ConvGeometry, PixelRect, TileSpec};
use delta_infer_core::ConvParams;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gather-formulation oracle: an output bit is true iff any receptive-field
/// tap lands on a true input bit. Independent of the scatter implementation.
fn brute_force_dilate_conv(mask: &UpdateMask, g: &ConvGeometry) -> UpdateMask {
    let (b, h, w) = mask.spatial();
    let (out_h, out_w) = g.output_size(h, w).unwrap();
    let mut out = UpdateMask::all_false(b, out_h, out_w);
    for bi in 0..b {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut any = false;
                'scan: for kr in 0..g.kernel_h {
                    let iy = g.tap_origin(oy) + (kr * g.dilation) as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for kc in 0..g.kernel_w {
                        let ix = g.tap_origin(ox) + (kc * g.dilation) as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        if mask.get(bi, iy as usize, ix as usize) {
                            any = true;
                            break 'scan;
                        }
                    }
                }
                out.set(bi, oy, ox, any);
            }
        }
    }
    out
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

#[test]
fn dilate_conv_matches_brute_force_across_geometries() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let geometries = [
        ConvGeometry::new(3, 3, 1, 1, 1),
        ConvGeometry::new(3, 3, 2, 1, 1),
        ConvGeometry::new(3, 3, 2, 1, 0),
        ConvGeometry::new(1, 1, 1, 1, 0),
        ConvGeometry::new(5, 5, 1, 1, 2),
        ConvGeometry::new(3, 3, 1, 2, 2),
        ConvGeometry::new(2, 2, 2, 1, 0),
        ConvGeometry::new(3, 1, 1, 1, 0),
    ];
    for g in &geometries {
        for density in [0.05, 0.3, 0.9] {
            let m = random_mask(&mut rng, 2, 8, 8, density);
            let got = mask_dilate_conv(&m, g).unwrap();
            let want = brute_force_dilate_conv(&m, g);
            assert_eq!(got, want, "geometry {g:?} density {density}");
        }
    }
}

#[test]
fn dilate_radius_matches_distance_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for radius in [0usize, 1, 2, 7] {
        let m = random_mask(&mut rng, 1, 20, 20, 0.05);
        let got = mask_dilate_radius(&m, radius);
        for y in 0..20 {
            for x in 0..20 {
                let mut near = false;
                'scan: for sy in 0..20 {
                    for sx in 0..20usize {
                        if m.get(0, sy, sx)
                            && (y as isize - sy as isize).unsigned_abs().max(
                                (x as isize - sx as isize).unsigned_abs(),
                            ) <= radius
                        {
                            near = true;
                            break 'scan;
                        }
                    }
                }
                assert_eq!(got.get(0, y, x), near, "radius {radius} at ({y},{x})");
            }
        }
    }
}

#[test]
fn union_matches_elementwise_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let a = random_mask(&mut rng, 2, 9, 7, 0.4);
    let b = random_mask(&mut rng, 2, 9, 7, 0.4);
    let u = mask_union(&a, &b).unwrap();
    for bi in 0..2 {
        for y in 0..9 {
            for x in 0..7 {
                assert_eq!(u.get(bi, y, x), a.get(bi, y, x) || b.get(bi, y, x));
            }
        }
    }
}

#[test]
fn tile_active_count_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let g = ConvGeometry::new(3, 3, 1, 1, 1);
    let tiles = TileSpec::new(6, 6).unwrap();
    let m = random_mask(&mut rng, 1, 17, 13, 0.2);
    let (out_h, out_w) = g.output_size(17, 13).unwrap();
    let (gy, gx) = tiles.grid(out_h, out_w);
    for ty in 0..gy {
        for tx in 0..gx {
            let rect = tiles.output_rect(ty, tx, out_h, out_w);
            let window = input_window(&rect, &g, 17, 13);
            let mut want = 0;
            for y in window.y0..window.y1 {
                for x in window.x0..window.x1 {
                    if m.get(0, y, x) {
                        want += 1;
                    }
                }
            }
            assert_eq!(m.count_in_rect(0, &window), want);
        }
    }
}

#[test]
fn full_window_for_3x3_stride1_counts_64() {
    let g = ConvGeometry::new(3, 3, 1, 1, 1);
    let tiles = TileSpec::new(6, 6).unwrap();
    let m = UpdateMask::all_true(1, 18, 18);
    let rect = tiles.output_rect(1, 1, 18, 18);
    let window = input_window(&rect, &g, 18, 18);
    assert_eq!(m.count_in_rect(0, &window), 64);
}

/// mask_dilate_conv equals the support of a dense convolution of the 0/1 mask
/// with an all-ones kernel, thresholded at > 0.
fn support_oracle(mask: &UpdateMask, g: &ConvGeometry) -> UpdateMask {
    let (b, h, w) = mask.spatial();
    let mut x = FeatureTensor::zeros(Shape::new(b, h, w, 1));
    for bi in 0..b {
        for y in 0..h {
            for xx in 0..w {
                if mask.get(bi, y, xx) {
                    x.set(bi, y, xx, 0, 1.0);
                }
            }
        }
    }
    let params = ConvParams {
        in_channels: 1,
        out_channels: 1,
        geometry: *g,
        groups: 1,
        weights: vec![1.0; g.kernel_h * g.kernel_w],
        bias: None,
    };
    let y = dense_conv2d(&x, &params).unwrap();
    let s = y.shape();
    let mut out = UpdateMask::all_false(s.batch, s.height, s.width);
    for bi in 0..s.batch {
        for yy in 0..s.height {
            for xx in 0..s.width {
                out.set(bi, yy, xx, y.at(bi, yy, xx, 0) > 0.0);
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dilate_conv_is_dense_conv_support(
        seed in 0u64..1000,
        density in 0.0f64..0.6,
        kernel in 1usize..=3,
        stride in 1usize..=2,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let padding = kernel / 2;
        let g = ConvGeometry::new(kernel, kernel, stride, 1, padding);
        let m = random_mask(&mut rng, 1, 10, 10, density);
        let got = mask_dilate_conv(&m, &g).unwrap();
        let want = support_oracle(&m, &g);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn dilate_conv_is_monotone(seed in 0u64..1000, extra_y in 0usize..8, extra_x in 0usize..8) {
        // Adding true bits to the input never removes true bits from the output.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = ConvGeometry::new(3, 3, 1, 1, 1);
        let base = random_mask(&mut rng, 1, 8, 8, 0.2);
        let mut grown = base.clone();
        grown.set(0, extra_y, extra_x, true);
        let a = mask_dilate_conv(&base, &g).unwrap();
        let b = mask_dilate_conv(&grown, &g).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                prop_assert!(!a.get(0, y, x) || b.get(0, y, x));
            }
        }
    }

    #[test]
    fn dilate_radius_composes_away_from_borders(
        seed in 0u64..1000,
        a in 0usize..4,
        b in 0usize..4,
    ) {
        // dilate(dilate(m, a), b) = dilate(m, a + b) away from borders; with
        // clipping both sides agree everywhere, since the Chebyshev ball
        // decomposition also holds under border clamping.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_mask(&mut rng, 1, 16, 16, 0.05);
        let two_step = mask_dilate_radius(&mask_dilate_radius(&m, a), b);
        let one_step = mask_dilate_radius(&m, a + b);
        prop_assert_eq!(two_step, one_step);
    }

    #[test]
    fn union_is_commutative_and_absorbing(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_mask(&mut rng, 1, 6, 6, 0.3);
        let b = random_mask(&mut rng, 1, 6, 6, 0.3);
        prop_assert_eq!(mask_union(&a, &b).unwrap(), mask_union(&b, &a).unwrap());
        let u = mask_union(&a, &b).unwrap();
        prop_assert_eq!(mask_union(&u, &a).unwrap(), u);
    }
}

/// The paper-level dilation figure: one pixel, three 3x3 stride-1 layers,
/// exactly 49 active pixels, via a PixelRect count as well.
#[test]
fn three_layer_dilation_rect() {
    let mut m = UpdateMask::all_false(1, 32, 32);
    m.set(0, 15, 15, true);
    let g = ConvGeometry::new(3, 3, 1, 1, 1);
    for _ in 0..3 {
        m = mask_dilate_conv(&m, &g).unwrap();
    }
    assert_eq!(m.count_true(), 49);
    let rect = PixelRect { y0: 12, y1: 19, x0: 12, x1: 19 };
    assert_eq!(m.count_in_rect(0, &rect), 49);
}
