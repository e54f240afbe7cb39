//! Tiled sparse convolution with hybrid skip / very-sparse / dense dispatch.
//!
//! The output is partitioned into tiles. For each tile the update mask of its
//! input window decides the processing mode: no active pixel skips the tile
//! entirely, up to `very_sparse_max` active pixels take a gathered path that
//! touches only the weight slices it needs, and anything denser runs the
//! unconditional tile kernel. Inactive output pixels are never written.
//!
//! Accumulation order is fixed per output value (kernel row, kernel column,
//! input channel; bias last) so results are deterministic and the very-sparse
//! and dense paths agree to the last bit.

use rayon::prelude::*;

use crate::error::{EngineError, Result};
use crate::mask::{mask_dilate_conv, tile_active_count, UpdateMask};
use crate::stats::{LayerStats, TileMode};
use crate::tensor::{FeatureTensor, Shape};
use crate::tile::{input_window, ConvGeometry, PixelRect, TileSpec};

use super::{check_tensor_mask_pair, DispatchConfig, ExecContext};

/// Convolution parameters. Weights are flat in out-channel, kernel-row,
/// kernel-col, in-channel-per-group order. `groups == in_channels` is a
/// depthwise convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
    pub groups: usize,
    pub weights: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

impl ConvParams {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let g = &self.geometry;
        if g.padding > g.dilation * (g.kernel_h - 1) || g.padding > g.dilation * (g.kernel_w - 1) {
            // Keeps every output pixel's receptive field non-empty.
            return Err(EngineError::InvalidParameter(format!(
                "padding {} exceeds kernel span; some output pixels would read only padding",
                g.padding
            )));
        }
        if self.groups == 0
            || !self.in_channels.is_multiple_of(self.groups)
            || !self.out_channels.is_multiple_of(self.groups)
        {
            return Err(EngineError::InvalidParameter(format!(
                "groups {} must divide in_channels {} and out_channels {}",
                self.groups, self.in_channels, self.out_channels
            )));
        }
        let expected = self.out_channels * g.kernel_h * g.kernel_w * self.group_in_channels();
        if self.weights.len() != expected {
            return Err(EngineError::InvalidParameter(format!(
                "weight length {} does not match expected {expected}",
                self.weights.len()
            )));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.out_channels {
                return Err(EngineError::InvalidParameter(format!(
                    "bias length {} does not match out_channels {}",
                    b.len(),
                    self.out_channels
                )));
            }
        }
        if !self.weights.iter().all(|w| w.is_finite())
            || !self.bias.as_deref().unwrap_or(&[]).iter().all(|b| b.is_finite())
        {
            return Err(EngineError::NonFinite("convolution weights".into()));
        }
        Ok(())
    }

    pub fn group_in_channels(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn group_out_channels(&self) -> usize {
        self.out_channels / self.groups
    }

    /// Depthwise-style convolutions read each input pixel from a single
    /// channel slice and use the per-pixel kernel regardless of tile density.
    pub fn per_pixel_kernel(&self) -> bool {
        self.groups > 1 && self.group_in_channels() == 1
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.channels != self.in_channels {
            return Err(EngineError::ShapeMismatch(format!(
                "conv expects {} input channels, tensor has {}",
                self.in_channels, input.channels
            )));
        }
        let (h, w) = self.geometry.output_size(input.height, input.width)?;
        Ok(Shape::new(input.batch, h, w, self.out_channels))
    }
}

/// Dense-equivalent multiply-accumulate count for one frame of this layer,
/// from shapes alone. For standard convolutions the dense tile kernel
/// multiplies padding taps by gathered zeros, so every kernel position
/// counts; the depthwise per-pixel kernel loads only in-bounds pixels, so
/// only in-bounds taps count.
pub fn dense_equivalent_macs(params: &ConvParams, input: Shape) -> u64 {
    let g = &params.geometry;
    let Ok((out_h, out_w)) = g.output_size(input.height, input.width) else {
        return 0;
    };
    let per_tap = (params.group_in_channels() * params.out_channels) as u64;
    if params.per_pixel_kernel() {
        let taps_axis = |out: usize, kernel: usize, extent: usize| -> u64 {
            let mut total = 0u64;
            for o in 0..out {
                let origin = g.tap_origin(o);
                for k in 0..kernel {
                    let t = origin + (k * g.dilation) as isize;
                    if t >= 0 && (t as usize) < extent {
                        total += 1;
                    }
                }
            }
            total
        };
        let ty = taps_axis(out_h, g.kernel_h, input.height);
        let tx = taps_axis(out_w, g.kernel_w, input.width);
        input.batch as u64 * ty * tx * per_tap
    } else {
        (input.batch * out_h * out_w * g.kernel_h * g.kernel_w) as u64 * per_tap
    }
}

struct BandDesc {
    b: usize,
    ty: usize,
    y0: usize,
    y1: usize,
}

struct ConvRun<'a> {
    input: &'a FeatureTensor,
    mask_in: &'a UpdateMask,
    mask_out: &'a UpdateMask,
    params: &'a ConvParams,
    tiles: &'a TileSpec,
    dispatch: DispatchConfig,
    first_frame: bool,
    out_h: usize,
    out_w: usize,
    in_h: usize,
    in_w: usize,
    grid_x: usize,
}

/// Sparse delta convolution. The output delta at every active output pixel
/// equals the dense convolution of the delta input with inactive pixels
/// treated as zero. Bias is applied only on the first (dense) frame; later
/// frames propagate differences and the bias is already part of the
/// downstream accumulated state.
pub fn sparse_conv2d(
    delta_in: &FeatureTensor,
    mask_in: &UpdateMask,
    params: &ConvParams,
    tiles: &TileSpec,
    first_frame: bool,
    ctx: &ExecContext,
    stats: &mut LayerStats,
) -> Result<(FeatureTensor, UpdateMask)> {
    params.validate()?;
    check_tensor_mask_pair(delta_in, mask_in, "sparse_conv2d input")?;
    let in_shape = delta_in.shape();
    let out_shape = params.output_shape(in_shape)?;
    let (out_h, out_w) = (out_shape.height, out_shape.width);

    let mask_out = mask_dilate_conv(mask_in, &params.geometry)?;
    let mut out = FeatureTensor::stale(out_shape, ctx.poison);

    stats.mask_density = mask_in.density();
    stats.mac_dense_equivalent += dense_equivalent_macs(params, in_shape);

    let (grid_y, grid_x) = tiles.grid(out_h, out_w);
    let run = ConvRun {
        input: delta_in,
        mask_in,
        mask_out: &mask_out,
        params,
        tiles,
        dispatch: ctx.dispatch,
        first_frame,
        out_h,
        out_w,
        in_h: in_shape.height,
        in_w: in_shape.width,
        grid_x,
    };

    // Each band is one tile row of one batch item: a contiguous, disjoint
    // slice of the output buffer that a worker owns exclusively.
    let mut descs = Vec::with_capacity(in_shape.batch * grid_y);
    for b in 0..in_shape.batch {
        for ty in 0..grid_y {
            let y0 = ty * tiles.tile_height;
            let y1 = ((ty + 1) * tiles.tile_height).min(out_h);
            descs.push(BandDesc { b, ty, y0, y1 });
        }
    }
    let mut bands: Vec<(&BandDesc, &mut [f32])> = Vec::with_capacity(descs.len());
    {
        let mut rest = out.data_mut();
        for d in &descs {
            let len = (d.y1 - d.y0) * out_w * out_shape.channels;
            let (band, tail) = rest.split_at_mut(len);
            bands.push((d, band));
            rest = tail;
        }
        debug_assert!(rest.is_empty());
    }

    let partials: Vec<LayerStats> = if let Some(pool) = ctx.pool.clone() {
        pool.install(|| bands.into_par_iter().map(|(d, band)| run.band(d, band)).collect())
    } else {
        bands.into_iter().map(|(d, band)| run.band(d, band)).collect()
    };
    for p in &partials {
        stats.absorb(p);
    }
    Ok((out, mask_out))
}

impl ConvRun<'_> {
    fn band(&self, desc: &BandDesc, band: &mut [f32]) -> LayerStats {
        let mut stats = LayerStats::default();
        let g = &self.params.geometry;
        let mut gather: Vec<f32> = Vec::new();
        let mut actives: Vec<(usize, usize)> = Vec::new();
        let mut taps: Vec<(usize, usize)> = Vec::new();
        let mut used_positions = vec![false; g.kernel_h * g.kernel_w];
        for tx in 0..self.grid_x {
            let rect = self.tiles.output_rect(desc.ty, tx, self.out_h, self.out_w);
            let window = input_window(&rect, g, self.in_h, self.in_w);
            let active = tile_active_count(self.mask_in, desc.b, &window);
            // Mask bytes: window read plus output-tile write.
            stats.bytes_touched_estimate += (window.pixels() + rect.pixels()) as u64;
            if active == 0 {
                stats.record_tile(TileMode::Skip);
                continue;
            }
            let mode = if active <= self.dispatch.very_sparse_max {
                TileMode::VerySparse
            } else {
                TileMode::Dense
            };
            stats.record_tile(mode);
            if self.params.per_pixel_kernel() || mode == TileMode::VerySparse {
                self.gathered_tile(
                    desc,
                    &rect,
                    &window,
                    band,
                    &mut stats,
                    &mut actives,
                    &mut taps,
                    &mut used_positions,
                );
            } else {
                self.dense_tile(desc, &rect, band, &mut stats, &mut gather, active);
            }
        }
        stats
    }

    #[inline]
    fn band_offset(&self, desc: &BandDesc, oy: usize, ox: usize) -> usize {
        ((oy - desc.y0) * self.out_w + ox) * self.params.out_channels
    }

    /// Unconditional kernel over the whole tile window. The window is
    /// gathered once with explicit zeros for inactive and out-of-bounds
    /// pixels, so the inner loops carry no conditions at all.
    fn dense_tile(
        &self,
        desc: &BandDesc,
        rect: &PixelRect,
        band: &mut [f32],
        stats: &mut LayerStats,
        gather: &mut Vec<f32>,
        window_active: usize,
    ) {
        let p = self.params;
        let g = &p.geometry;
        let (kh, kw) = (g.kernel_h, g.kernel_w);
        let in_ch = p.in_channels;
        let in_cg = p.group_in_channels();
        let out_cg = p.group_out_channels();

        // Virtual (unclipped) window origin; taps outside the input stay zero.
        let vy0 = g.tap_origin(rect.y0);
        let vx0 = g.tap_origin(rect.x0);
        let wh = (rect.y1 - rect.y0 - 1) * g.stride + (kh - 1) * g.dilation + 1;
        let ww = (rect.x1 - rect.x0 - 1) * g.stride + (kw - 1) * g.dilation + 1;
        gather.clear();
        gather.resize(wh * ww * in_ch, 0.0);
        for vy in 0..wh {
            let iy = vy0 + vy as isize;
            if iy < 0 || iy as usize >= self.in_h {
                continue;
            }
            let iy = iy as usize;
            let row = self.mask_in.row(desc.b, iy);
            for vx in 0..ww {
                let ix = vx0 + vx as isize;
                if ix < 0 || ix as usize >= self.in_w {
                    continue;
                }
                let ix = ix as usize;
                if row[ix] == 0 {
                    continue;
                }
                let src = self.input.pixel(desc.b, iy, ix);
                let dst = (vy * ww + vx) * in_ch;
                gather[dst..dst + in_ch].copy_from_slice(src);
            }
        }

        let mut active_out = 0u64;
        for oy in rect.y0..rect.y1 {
            for ox in rect.x0..rect.x1 {
                if !self.mask_out.get(desc.b, oy, ox) {
                    continue;
                }
                active_out += 1;
                let base = self.band_offset(desc, oy, ox);
                let ry = (oy - rect.y0) * g.stride;
                let rx = (ox - rect.x0) * g.stride;
                for oc in 0..p.out_channels {
                    let group = oc / out_cg;
                    let wbase = oc * kh * kw * in_cg;
                    let cbase = group * in_cg;
                    let mut acc = 0.0f32;
                    for kr in 0..kh {
                        let grow = (ry + kr * g.dilation) * ww;
                        for kc in 0..kw {
                            let goff = (grow + rx + kc * g.dilation) * in_ch + cbase;
                            let woff = wbase + (kr * kw + kc) * in_cg;
                            acc = p.weights[woff..woff + in_cg]
                                .iter()
                                .zip(&gather[goff..goff + in_cg])
                                .fold(acc, |a, (w, x)| a + w * x);
                        }
                    }
                    if self.first_frame {
                        if let Some(bias) = &p.bias {
                            acc += bias[oc];
                        }
                    }
                    band[base + oc] = acc;
                }
            }
        }
        // Analytic full-tile MAC count for the dense mode.
        stats.mac_performed += (rect.pixels() * kh * kw * in_cg * p.out_channels) as u64;
        stats.bytes_touched_estimate += 4
            * (window_active as u64 * in_ch as u64
                + (kh * kw * in_cg * p.out_channels) as u64
                + active_out * p.out_channels as u64);
    }

    /// Gathered path for very sparse tiles and for depthwise convolutions:
    /// iterates a short list of active input pixels and loads only the weight
    /// slices those pixels require.
    #[allow(clippy::too_many_arguments)]
    fn gathered_tile(
        &self,
        desc: &BandDesc,
        rect: &PixelRect,
        window: &PixelRect,
        band: &mut [f32],
        stats: &mut LayerStats,
        actives: &mut Vec<(usize, usize)>,
        taps: &mut Vec<(usize, usize)>,
        used_positions: &mut [bool],
    ) {
        let p = self.params;
        let g = &p.geometry;
        let (kh, kw) = (g.kernel_h, g.kernel_w);
        let in_cg = p.group_in_channels();
        let out_cg = p.group_out_channels();
        self.mask_in.active_in_rect(desc.b, window, actives);
        used_positions.fill(false);

        let data = self.input.data();
        let mut pairs = 0u64;
        let mut active_out = 0u64;
        for oy in rect.y0..rect.y1 {
            for ox in rect.x0..rect.x1 {
                if !self.mask_out.get(desc.b, oy, ox) {
                    continue;
                }
                active_out += 1;
                let ybase = g.tap_origin(oy);
                let xbase = g.tap_origin(ox);
                // Active pixels arrive in row-major order, which visits
                // kernel positions in the same (row, col) order as the dense
                // kernel; the two paths therefore sum identical terms in an
                // identical sequence.
                taps.clear();
                for &(iy, ix) in actives.iter() {
                    let dy = iy as isize - ybase;
                    if dy < 0 || dy % g.dilation as isize != 0 {
                        continue;
                    }
                    let kr = (dy / g.dilation as isize) as usize;
                    if kr >= kh {
                        continue;
                    }
                    let dx = ix as isize - xbase;
                    if dx < 0 || dx % g.dilation as isize != 0 {
                        continue;
                    }
                    let kc = (dx / g.dilation as isize) as usize;
                    if kc >= kw {
                        continue;
                    }
                    let pos = kr * kw + kc;
                    used_positions[pos] = true;
                    taps.push((pos * in_cg, self.input.pixel_offset(desc.b, iy, ix)));
                }
                pairs += taps.len() as u64;
                let base = self.band_offset(desc, oy, ox);
                for oc in 0..p.out_channels {
                    let group = oc / out_cg;
                    let wbase = oc * kh * kw * in_cg;
                    let cbase = group * in_cg;
                    let mut acc = 0.0f32;
                    for &(woff, ioff) in taps.iter() {
                        acc = p.weights[wbase + woff..wbase + woff + in_cg]
                            .iter()
                            .zip(&data[ioff + cbase..ioff + cbase + in_cg])
                            .fold(acc, |a, (w, x)| a + w * x);
                    }
                    if self.first_frame {
                        if let Some(bias) = &p.bias {
                            acc += bias[oc];
                        }
                    }
                    band[base + oc] = acc;
                }
            }
        }
        let used = used_positions.iter().filter(|&&u| u).count() as u64;
        stats.mac_performed += pairs * (in_cg * p.out_channels) as u64;
        stats.bytes_touched_estimate += 4
            * (actives.len() as u64 * p.in_channels as u64
                + used * (in_cg * p.out_channels) as u64
                + active_out * p.out_channels as u64);
    }
}
