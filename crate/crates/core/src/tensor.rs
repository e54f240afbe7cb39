//! Dense 4-D feature tensors in pixel-coalesced (batch, row, col, channel)
//! layout.
//!
//! All channels of one pixel occupy contiguous storage so that per-pixel
//! sparse access touches a single run of memory. Pixels whose update-mask bit
//! is false may hold arbitrary stale values; they carry no meaning and no
//! consumer may read them.

use crate::error::{EngineError, Result};

/// Shape of a feature tensor: batch, spatial rows/cols, channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(batch: usize, height: usize, width: usize, channels: usize) -> Self {
        Self { batch, height, width, channels }
    }

    /// Total element count.
    pub fn len(&self) -> usize {
        self.batch * self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of spatial pixels across the whole batch.
    pub fn pixels(&self) -> usize {
        self.batch * self.height * self.width
    }

    /// Spatial part only (ignores channels), used to pair tensors with masks.
    pub fn spatial(&self) -> (usize, usize, usize) {
        (self.batch, self.height, self.width)
    }

    pub fn with_channels(&self, channels: usize) -> Self {
        Self { channels, ..*self }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.batch, self.height, self.width, self.channels)
    }
}

/// Dense buffer of 32-bit floats in batch-major, then row, col, channel order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    shape: Shape,
    data: Vec<f32>,
}

impl FeatureTensor {
    /// All-zero tensor.
    pub fn zeros(shape: Shape) -> Self {
        Self { shape, data: vec![0.0; shape.len()] }
    }

    /// Tensor whose contents are unspecified until written. `poison` fills the
    /// buffer with NaN so that an illegal read of a never-written pixel fails
    /// loudly downstream; otherwise the buffer starts as zeros.
    pub fn stale(shape: Shape, poison: bool) -> Self {
        let fill = if poison { f32::NAN } else { 0.0 };
        Self { shape, data: vec![fill; shape.len()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(EngineError::ShapeMismatch(format!(
                "data length {} does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn pixel_offset(&self, b: usize, y: usize, x: usize) -> usize {
        ((b * self.shape.height + y) * self.shape.width + x) * self.shape.channels
    }

    /// Contiguous channel slice of one pixel.
    #[inline]
    pub fn pixel(&self, b: usize, y: usize, x: usize) -> &[f32] {
        let off = self.pixel_offset(b, y, x);
        &self.data[off..off + self.shape.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, b: usize, y: usize, x: usize) -> &mut [f32] {
        let off = self.pixel_offset(b, y, x);
        let c = self.shape.channels;
        &mut self.data[off..off + c]
    }

    #[inline]
    pub fn at(&self, b: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.pixel_offset(b, y, x) + c]
    }

    #[inline]
    pub fn set(&mut self, b: usize, y: usize, x: usize, c: usize, v: f32) {
        let off = self.pixel_offset(b, y, x) + c;
        self.data[off] = v;
    }

    pub fn fill(&mut self, v: f32) {
        self.data.fill(v);
    }

    /// True when every element is a finite number.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &FeatureTensor) -> bool {
        self.shape == other.shape
    }
}
