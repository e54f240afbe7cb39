//! Per-pixel update masks and the mask arithmetic that propagates them
//! between layers.
//!
//! A mask stores one byte per spatial pixel (not bit-packed) so that tile
//! workers can write disjoint regions without read-modify-write hazards.
//! Bit true means every channel of that pixel in the paired tensor is a
//! valid delta.

use crate::error::{EngineError, Result};
use crate::tile::{ConvGeometry, PixelRect};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateMask {
    batch: usize,
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl UpdateMask {
    pub fn all_false(batch: usize, height: usize, width: usize) -> Self {
        Self { batch, height, width, bits: vec![0; batch * height * width] }
    }

    pub fn all_true(batch: usize, height: usize, width: usize) -> Self {
        Self { batch, height, width, bits: vec![1; batch * height * width] }
    }

    pub fn from_bytes(batch: usize, height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != batch * height * width {
            return Err(EngineError::ShapeMismatch(format!(
                "mask byte count {} does not match {batch}x{height}x{width}",
                bits.len()
            )));
        }
        Ok(Self { batch, height, width, bits: bits.iter().map(|&b| (b != 0) as u8).collect() })
    }

    pub fn spatial(&self) -> (usize, usize, usize) {
        (self.batch, self.height, self.width)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bits
    }

    pub(crate) fn bytes_mut(&mut self) -> &mut [u8] {
        &mut self.bits
    }

    #[inline]
    fn offset(&self, b: usize, y: usize, x: usize) -> usize {
        (b * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, b: usize, y: usize, x: usize) -> bool {
        self.bits[self.offset(b, y, x)] != 0
    }

    #[inline]
    pub fn set(&mut self, b: usize, y: usize, x: usize, v: bool) {
        let off = self.offset(b, y, x);
        self.bits[off] = v as u8;
    }

    /// Row slice for one (batch, y).
    #[inline]
    pub fn row(&self, b: usize, y: usize) -> &[u8] {
        let off = (b * self.height + y) * self.width;
        &self.bits[off..off + self.width]
    }

    pub fn rows_mut(&mut self) -> std::slice::ChunksMut<'_, u8> {
        self.bits.chunks_mut(self.width)
    }

    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    /// Fraction of true bits over all pixels.
    pub fn density(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count_true() as f64 / self.bits.len() as f64
        }
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b != 0)
    }

    /// Number of true bits inside a clipped rectangle of one batch item.
    pub fn count_in_rect(&self, b: usize, rect: &PixelRect) -> usize {
        let mut n = 0;
        for y in rect.y0..rect.y1 {
            n += self.row(b, y)[rect.x0..rect.x1].iter().filter(|&&v| v != 0).count();
        }
        n
    }

    /// True-bit coordinates inside a rectangle, in row-major scan order.
    pub fn active_in_rect(&self, b: usize, rect: &PixelRect, out: &mut Vec<(usize, usize)>) {
        out.clear();
        for y in rect.y0..rect.y1 {
            let row = self.row(b, y);
            for x in rect.x0..rect.x1 {
                if row[x] != 0 {
                    out.push((y, x));
                }
            }
        }
    }

    fn check_same_shape(&self, other: &UpdateMask) -> Result<()> {
        if self.spatial() != other.spatial() {
            return Err(EngineError::ShapeMismatch(format!(
                "mask {}x{}x{} vs {}x{}x{}",
                self.batch, self.height, self.width, other.batch, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Number of active pixels inside one tile's input window (the clipped
/// bounding rectangle of the receptive fields of the tile's output pixels).
/// This count drives the skip / very-sparse / dense dispatch decision.
pub fn tile_active_count(mask: &UpdateMask, batch: usize, window: &PixelRect) -> usize {
    mask.count_in_rect(batch, window)
}

/// Element-wise OR of two masks of identical shape.
pub fn mask_union(a: &UpdateMask, b: &UpdateMask) -> Result<UpdateMask> {
    a.check_same_shape(b)?;
    let bits = a.bits.iter().zip(&b.bits).map(|(&x, &y)| x | y).collect();
    Ok(UpdateMask { batch: a.batch, height: a.height, width: a.width, bits })
}

/// Propagates a mask through a convolution: the output bit at pixel p is true
/// iff any input pixel inside p's receptive field carries a true bit.
///
/// Implemented by scattering each active input pixel onto the output pixels
/// it reaches, which is cheap for the sparse masks seen in steady state. The
/// gather formulation (scan every output pixel's receptive field) is kept in
/// the test suite as an independent oracle.
pub fn mask_dilate_conv(mask: &UpdateMask, geometry: &ConvGeometry) -> Result<UpdateMask> {
    let (out_h, out_w) = geometry.output_size(mask.height, mask.width)?;
    let mut out = UpdateMask::all_false(mask.batch, out_h, out_w);

    // Output coordinates reached by one input coordinate along one axis.
    let reach = |i: usize, kernel: usize, out_extent: usize, hits: &mut Vec<usize>| {
        hits.clear();
        for k in 0..kernel {
            let num = i as isize + geometry.padding as isize - (k * geometry.dilation) as isize;
            if num < 0 {
                break; // larger k only decreases num
            }
            let num = num as usize;
            if num.is_multiple_of(geometry.stride) {
                let o = num / geometry.stride;
                if o < out_extent {
                    hits.push(o);
                }
            }
        }
    };

    let mut ys = Vec::with_capacity(geometry.kernel_h);
    let mut xs = Vec::with_capacity(geometry.kernel_w);
    for b in 0..mask.batch {
        for y in 0..mask.height {
            let row = mask.row(b, y);
            for x in 0..mask.width {
                if row[x] == 0 {
                    continue;
                }
                reach(y, geometry.kernel_h, out_h, &mut ys);
                reach(x, geometry.kernel_w, out_w, &mut xs);
                for &oy in &ys {
                    for &ox in &xs {
                        out.set(b, oy, ox, true);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Morphological dilation: the output bit is true iff any true input bit lies
/// within Chebyshev distance `radius`. Runs as two separable axis passes
/// since the Chebyshev ball is a square.
pub fn mask_dilate_radius(mask: &UpdateMask, radius: usize) -> UpdateMask {
    if radius == 0 {
        return mask.clone();
    }
    let (b, h, w) = mask.spatial();
    // Horizontal pass.
    let mut horiz = UpdateMask::all_false(b, h, w);
    for bi in 0..b {
        for y in 0..h {
            let row = mask.row(bi, y);
            for x in 0..w {
                if row[x] != 0 {
                    let x0 = x.saturating_sub(radius);
                    let x1 = (x + radius + 1).min(w);
                    let off = (bi * h + y) * w;
                    horiz.bits[off + x0..off + x1].fill(1);
                }
            }
        }
    }
    // Vertical pass.
    let mut out = UpdateMask::all_false(b, h, w);
    for bi in 0..b {
        for y in 0..h {
            let row = horiz.row(bi, y).to_vec();
            let y0 = y.saturating_sub(radius);
            let y1 = (y + radius + 1).min(h);
            for x in 0..w {
                if row[x] != 0 {
                    for yy in y0..y1 {
                        out.set(bi, yy, x, true);
                    }
                }
            }
        }
    }
    out
}
