//! Per-layer execution counters: tile dispatch modes, multiply-accumulate
//! counts and memory-traffic estimates.
//!
//! MAC counting is analytic per dispatched tile (window size x channels), not
//! instruction-counted. `bytes_touched_estimate` counts tensor, weight and
//! state elements actually read or written times four (mask bytes count as
//! one); it is an estimate and reports label it as such.

use serde::{Deserialize, Serialize};

/// Which processing path a tile took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TileMode {
    Skip,
    VerySparse,
    Dense,
}

/// Counters for one layer over one frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub layer: usize,
    pub kind: String,
    pub tiles_skipped: u64,
    pub tiles_very_sparse: u64,
    pub tiles_dense: u64,
    /// Multiply-accumulates actually dispatched (convolution layers only).
    pub mac_performed: u64,
    /// Multiply-accumulates a dense evaluation of this layer performs,
    /// computed once from layer shapes.
    pub mac_dense_equivalent: u64,
    pub bytes_touched_estimate: u64,
    /// Density of the layer's input update mask.
    pub mask_density: f64,
}

impl LayerStats {
    pub fn new(layer: usize, kind: &str) -> Self {
        Self { layer, kind: kind.to_string(), ..Default::default() }
    }

    pub fn total_tiles(&self) -> u64 {
        self.tiles_skipped + self.tiles_very_sparse + self.tiles_dense
    }

    pub fn tiles_processed(&self) -> u64 {
        self.tiles_very_sparse + self.tiles_dense
    }

    pub fn record_tile(&mut self, mode: TileMode) {
        match mode {
            TileMode::Skip => self.tiles_skipped += 1,
            TileMode::VerySparse => self.tiles_very_sparse += 1,
            TileMode::Dense => self.tiles_dense += 1,
        }
    }

    /// Element-wise sum of the counters; used to reduce per-tile partials.
    pub fn absorb(&mut self, other: &LayerStats) {
        self.tiles_skipped += other.tiles_skipped;
        self.tiles_very_sparse += other.tiles_very_sparse;
        self.tiles_dense += other.tiles_dense;
        self.mac_performed += other.mac_performed;
        self.mac_dense_equivalent += other.mac_dense_equivalent;
        self.bytes_touched_estimate += other.bytes_touched_estimate;
    }
}

/// Counters for one frame across all layers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    /// Total frames fed to the engine so far, not reset by buffer resets.
    pub frame: u64,
    pub wall_time_secs: f64,
    pub layers: Vec<LayerStats>,
}

impl RunStats {
    pub fn totals(&self) -> StatsTotals {
        let mut t = StatsTotals::default();
        for l in &self.layers {
            t.tiles_skipped += l.tiles_skipped;
            t.tiles_very_sparse += l.tiles_very_sparse;
            t.tiles_dense += l.tiles_dense;
            t.mac_performed += l.mac_performed;
            t.mac_dense_equivalent += l.mac_dense_equivalent;
            t.bytes_touched_estimate += l.bytes_touched_estimate;
        }
        t
    }
}

/// Aggregated tile and MAC counters, for one frame or a whole sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsTotals {
    pub tiles_skipped: u64,
    pub tiles_very_sparse: u64,
    pub tiles_dense: u64,
    pub mac_performed: u64,
    pub mac_dense_equivalent: u64,
    pub bytes_touched_estimate: u64,
}

impl StatsTotals {
    pub fn total_tiles(&self) -> u64 {
        self.tiles_skipped + self.tiles_very_sparse + self.tiles_dense
    }

    pub fn tiles_processed(&self) -> u64 {
        self.tiles_very_sparse + self.tiles_dense
    }

    /// Fraction of tiles that were not skipped.
    pub fn processed_tile_fraction(&self) -> f64 {
        let total = self.total_tiles();
        if total == 0 { 0.0 } else { self.tiles_processed() as f64 / total as f64 }
    }

    /// Dispatched MACs over dense-equivalent MACs.
    pub fn mac_fraction(&self) -> f64 {
        if self.mac_dense_equivalent == 0 {
            0.0
        } else {
            self.mac_performed as f64 / self.mac_dense_equivalent as f64
        }
    }

    pub fn absorb(&mut self, other: &StatsTotals) {
        self.tiles_skipped += other.tiles_skipped;
        self.tiles_very_sparse += other.tiles_very_sparse;
        self.tiles_dense += other.tiles_dense;
        self.mac_performed += other.mac_performed;
        self.mac_dense_equivalent += other.mac_dense_equivalent;
        self.bytes_touched_estimate += other.bytes_touched_estimate;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tile_counters_partition() {
        let mut s = LayerStats::new(0, "conv");
        s.record_tile(TileMode::Skip);
        s.record_tile(TileMode::Skip);
        s.record_tile(TileMode::VerySparse);
        s.record_tile(TileMode::Dense);
        assert_eq!(s.total_tiles(), 4);
        assert_eq!(s.tiles_processed(), 2);
    }

    #[test]
    fn totals_aggregate_layers() {
        let mut a = LayerStats::new(0, "conv");
        a.mac_performed = 10;
        a.mac_dense_equivalent = 40;
        let mut b = LayerStats::new(1, "conv");
        b.mac_performed = 30;
        b.mac_dense_equivalent = 40;
        let stats = RunStats { frame: 0, wall_time_secs: 0.0, layers: vec![a, b] };
        let t = stats.totals();
        assert_eq!(t.mac_performed, 40);
        assert!((t.mac_fraction() - 0.5).abs() < 1e-12);
    }
}
