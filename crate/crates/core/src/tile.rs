//! Tile partitioning and receptive-field window arithmetic.
//!
//! A tile is a rectangular block of *output* pixels processed as one unit;
//! it is the granularity at which the skip / very-sparse / dense dispatch
//! decision is made. Boundary tiles are partial rectangles and all window
//! arithmetic clips to tensor bounds.

use crate::error::{EngineError, Result};

/// Spatial geometry of a convolution-like operator (also used for pooling
/// windows). `dilation` spaces the kernel taps, it is unrelated to mask
/// dilation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(kernel_h: usize, kernel_w: usize, stride: usize, dilation: usize, padding: usize) -> Self {
        Self { kernel_h, kernel_w, stride, dilation, padding }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 || self.dilation == 0 {
            return Err(EngineError::InvalidParameter(format!(
                "kernel {}x{}, stride {}, dilation {} must all be >= 1",
                self.kernel_h, self.kernel_w, self.stride, self.dilation
            )));
        }
        Ok(())
    }

    /// Standard convolution output size for one spatial axis.
    fn out_extent(&self, input: usize, kernel: usize) -> Result<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return Err(EngineError::ShapeMismatch(format!(
                "input extent {input} with padding {} too small for kernel span {span}",
                self.padding
            )));
        }
        Ok((padded - span) / self.stride + 1)
    }

    pub fn output_size(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        Ok((self.out_extent(in_h, self.kernel_h)?, self.out_extent(in_w, self.kernel_w)?))
    }

    /// First input coordinate read by output coordinate `o` (may be negative
    /// inside the padded border).
    #[inline]
    pub fn tap_origin(&self, o: usize) -> isize {
        o as isize * self.stride as isize - self.padding as isize
    }
}

/// Half-open pixel rectangle, already clipped to tensor bounds. May be empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl PixelRect {
    pub fn is_empty(&self) -> bool {
        self.y0 >= self.y1 || self.x0 >= self.x1
    }

    pub fn pixels(&self) -> usize {
        if self.is_empty() { 0 } else { (self.y1 - self.y0) * (self.x1 - self.x0) }
    }
}

/// Tile dimensions for one layer. Output tiles are `tile_height` x
/// `tile_width` pixels; the grid size comes from ceiling division so boundary
/// tiles may be partial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileSpec {
    pub tile_height: usize,
    pub tile_width: usize,
}

impl TileSpec {
    pub fn new(tile_height: usize, tile_width: usize) -> Result<Self> {
        if tile_height == 0 || tile_width == 0 {
            return Err(EngineError::InvalidParameter("tile dimensions must be >= 1".into()));
        }
        Ok(Self { tile_height, tile_width })
    }

    /// Studied defaults: 6x6 output pixels for a 3x3 stride-1 kernel, 8x8 for
    /// 1x1 kernels, 5x5 for anything with a larger register footprint.
    pub fn default_for(geometry: &ConvGeometry) -> Self {
        if geometry.kernel_h == 1 && geometry.kernel_w == 1 {
            Self { tile_height: 8, tile_width: 8 }
        } else if geometry.kernel_h <= 3 && geometry.kernel_w <= 3 && geometry.stride == 1 {
            Self { tile_height: 6, tile_width: 6 }
        } else {
            Self { tile_height: 5, tile_width: 5 }
        }
    }

    /// Tile count per axis for an output of `out_h` x `out_w` pixels.
    pub fn grid(&self, out_h: usize, out_w: usize) -> (usize, usize) {
        (out_h.div_ceil(self.tile_height), out_w.div_ceil(self.tile_width))
    }

    /// Output-pixel rectangle of tile (`ty`, `tx`), clipped to the output.
    pub fn output_rect(&self, ty: usize, tx: usize, out_h: usize, out_w: usize) -> PixelRect {
        PixelRect {
            y0: ty * self.tile_height,
            y1: ((ty + 1) * self.tile_height).min(out_h),
            x0: tx * self.tile_width,
            x1: ((tx + 1) * self.tile_width).min(out_w),
        }
    }
}

/// Union of the receptive fields of every output pixel in `out_rect`, clipped
/// to the input bounds. Padding positions fall outside the result; they are
/// permanently inactive and contribute zero.
pub fn input_window(out_rect: &PixelRect, geometry: &ConvGeometry, in_h: usize, in_w: usize) -> PixelRect {
    if out_rect.is_empty() {
        return PixelRect { y0: 0, y1: 0, x0: 0, x1: 0 };
    }
    let span_y = geometry.dilation as isize * (geometry.kernel_h as isize - 1);
    let span_x = geometry.dilation as isize * (geometry.kernel_w as isize - 1);
    let y0 = geometry.tap_origin(out_rect.y0);
    let y1 = geometry.tap_origin(out_rect.y1 - 1) + span_y + 1;
    let x0 = geometry.tap_origin(out_rect.x0);
    let x1 = geometry.tap_origin(out_rect.x1 - 1) + span_x + 1;
    PixelRect {
        y0: y0.max(0) as usize,
        y1: (y1.max(0) as usize).min(in_h),
        x0: x0.max(0) as usize,
        x1: (x1.max(0) as usize).min(in_w),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_output_shape_rules() {
        let g = ConvGeometry::new(3, 3, 1, 1, 1);
        assert_eq!(g.output_size(8, 8).unwrap(), (8, 8));
        let g = ConvGeometry::new(3, 3, 2, 1, 0);
        assert_eq!(g.output_size(8, 8).unwrap(), (3, 3));
        let g = ConvGeometry::new(3, 3, 1, 2, 0);
        assert_eq!(g.output_size(8, 8).unwrap(), (4, 4));
        let g = ConvGeometry::new(1, 1, 1, 1, 0);
        assert_eq!(g.output_size(5, 7).unwrap(), (5, 7));
    }

    #[test]
    fn oversized_kernel_is_an_error() {
        let g = ConvGeometry::new(9, 9, 1, 1, 0);
        assert!(g.output_size(4, 4).is_err());
    }

    #[test]
    fn default_tile_sizes() {
        let std3 = ConvGeometry::new(3, 3, 1, 1, 1);
        assert_eq!(TileSpec::default_for(&std3), TileSpec { tile_height: 6, tile_width: 6 });
        let point = ConvGeometry::new(1, 1, 1, 1, 0);
        assert_eq!(TileSpec::default_for(&point), TileSpec { tile_height: 8, tile_width: 8 });
        let strided = ConvGeometry::new(3, 3, 2, 1, 1);
        assert_eq!(TileSpec::default_for(&strided), TileSpec { tile_height: 5, tile_width: 5 });
        let big = ConvGeometry::new(5, 5, 1, 1, 2);
        assert_eq!(TileSpec::default_for(&big), TileSpec { tile_height: 5, tile_width: 5 });
    }

    #[test]
    fn boundary_tiles_are_partial() {
        let tiles = TileSpec::new(6, 6).unwrap();
        assert_eq!(tiles.grid(8, 8), (2, 2));
        let r = tiles.output_rect(1, 1, 8, 8);
        assert_eq!(r, PixelRect { y0: 6, y1: 8, x0: 6, x1: 8 });
        assert_eq!(r.pixels(), 4);
    }

    #[test]
    fn window_of_full_tile_for_3x3_stride1_is_8x8() {
        // A 6x6 output tile of a 3x3 stride-1 convolution reads an 8x8 input
        // window: up to 64 pixels.
        let tiles = TileSpec::new(6, 6).unwrap();
        let g = ConvGeometry::new(3, 3, 1, 1, 1);
        let out = tiles.output_rect(1, 1, 18, 18);
        let w = input_window(&out, &g, 18, 18);
        assert_eq!(w.pixels(), 64);
    }

    #[test]
    fn window_clips_at_borders() {
        let tiles = TileSpec::new(6, 6).unwrap();
        let g = ConvGeometry::new(3, 3, 1, 1, 1);
        let out = tiles.output_rect(0, 0, 18, 18);
        let w = input_window(&out, &g, 18, 18);
        assert_eq!(w, PixelRect { y0: 0, y1: 7, x0: 0, x1: 7 });
    }
}
