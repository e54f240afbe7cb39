//! Stats-only mask simulator: re-derives every convolution layer's tile
//! dispatch and MAC counters from the propagated update masks alone,
//! independently of the engine's per-tile bookkeeping.
//!
//! The accounting rules are documented in `docs/reports.md`: a tile's mode is
//! decided by the number of active pixels in its clipped input window
//! (`0` skip, `1..=very_sparse_max` very sparse, else dense); dense tiles
//! count the full tile's multiply-accumulates, gathered tiles count one
//! weight-slice MAC block per (output pixel, active in-bounds tap) pair, and
//! depthwise convolutions always use the pair-based count. This module
//! recomputes those rules with per-output-pixel receptive-field scans rather
//! than the engine's incremental counters.

use std::collections::HashSet;

use delta_infer_core::graph::LayerKind;
use delta_infer_core::mask::UpdateMask;
use delta_infer_core::{ConvParams, ModelGraph, TileSpec, UpdateMask as Mask};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvRecount {
    pub layer: usize,
    pub tiles_skipped: u64,
    pub tiles_very_sparse: u64,
    pub tiles_dense: u64,
    pub mac_performed: u64,
    pub mac_dense_equivalent: u64,
}

impl ConvRecount {
    pub fn absorb(&mut self, other: &ConvRecount) {
        self.tiles_skipped += other.tiles_skipped;
        self.tiles_very_sparse += other.tiles_very_sparse;
        self.tiles_dense += other.tiles_dense;
        self.mac_performed += other.mac_performed;
        self.mac_dense_equivalent += other.mac_dense_equivalent;
    }
}

/// Recounts one frame from the per-layer output masks produced by a traced
/// run. `masks[i]` is the mask layer `i` emitted; a convolution consumes the
/// mask of its input layer.
pub fn recount_frame(
    graph: &ModelGraph,
    masks: &[UpdateMask],
    very_sparse_max: usize,
) -> Vec<ConvRecount> {
    let mut out = Vec::new();
    for (i, record) in graph.layers().iter().enumerate() {
        let LayerKind::Conv { params, tiles } = &record.kind else {
            continue;
        };
        let mask_in = &masks[record.inputs[0]];
        let mut counts = recount_conv(params, tiles, mask_in, very_sparse_max);
        counts.layer = i;
        out.push(counts);
    }
    out
}

fn recount_conv(
    params: &ConvParams,
    tiles: &TileSpec,
    mask_in: &Mask,
    very_sparse_max: usize,
) -> ConvRecount {
    let g = &params.geometry;
    let (batch, in_h, in_w) = mask_in.spatial();
    let (out_h, out_w) = g.output_size(in_h, in_w).expect("mask matches layer shapes");
    let in_cg = params.in_channels / params.groups;
    let per_pair = (in_cg * params.out_channels) as u64;
    let per_pixel = params.per_pixel_kernel();
    let (grid_y, grid_x) = tiles.grid(out_h, out_w);

    let mut r = ConvRecount::default();
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    for b in 0..batch {
        for ty in 0..grid_y {
            for tx in 0..grid_x {
                let y0 = ty * tiles.tile_height;
                let y1 = ((ty + 1) * tiles.tile_height).min(out_h);
                let x0 = tx * tiles.tile_width;
                let x1 = ((tx + 1) * tiles.tile_width).min(out_w);

                // Active count over the clipped rectangular input window, per
                // the documented window rule.
                let wy0 = (y0 as isize * g.stride as isize - g.padding as isize).max(0) as usize;
                let wy1 = (((y1 - 1) as isize * g.stride as isize - g.padding as isize
                    + (g.dilation * (g.kernel_h - 1)) as isize
                    + 1)
                    .max(0) as usize)
                    .min(in_h);
                let wx0 = (x0 as isize * g.stride as isize - g.padding as isize).max(0) as usize;
                let wx1 = (((x1 - 1) as isize * g.stride as isize - g.padding as isize
                    + (g.dilation * (g.kernel_w - 1)) as isize
                    + 1)
                    .max(0) as usize)
                    .min(in_w);
                let mut window_active = 0usize;
                for y in wy0..wy1 {
                    for x in wx0..wx1 {
                        if mask_in.get(b, y, x) {
                            window_active += 1;
                        }
                    }
                }

                // Pair count via an explicit tap scan per output pixel.
                seen.clear();
                let mut pairs = 0u64;
                let mut dense_taps = 0u64;
                for oy in y0..y1 {
                    for ox in x0..x1 {
                        for kr in 0..g.kernel_h {
                            let iy = oy as isize * g.stride as isize - g.padding as isize
                                + (kr * g.dilation) as isize;
                            if iy < 0 || iy as usize >= in_h {
                                continue;
                            }
                            for kc in 0..g.kernel_w {
                                let ix = ox as isize * g.stride as isize - g.padding as isize
                                    + (kc * g.dilation) as isize;
                                if ix < 0 || ix as usize >= in_w {
                                    continue;
                                }
                                dense_taps += 1;
                                if mask_in.get(b, iy as usize, ix as usize) {
                                    pairs += 1;
                                    seen.insert((iy as usize, ix as usize));
                                }
                            }
                        }
                    }
                }
                debug_assert!(seen.len() <= window_active);

                r.mac_dense_equivalent += if per_pixel {
                    dense_taps * per_pair
                } else {
                    ((y1 - y0) * (x1 - x0) * g.kernel_h * g.kernel_w) as u64 * per_pair
                };
                if window_active == 0 {
                    r.tiles_skipped += 1;
                    continue;
                }
                if window_active <= very_sparse_max {
                    r.tiles_very_sparse += 1;
                } else {
                    r.tiles_dense += 1;
                }
                r.mac_performed += if per_pixel || window_active <= very_sparse_max {
                    pairs * per_pair
                } else {
                    ((y1 - y0) * (x1 - x0) * g.kernel_h * g.kernel_w) as u64 * per_pair
                };
            }
        }
    }
    r
}
