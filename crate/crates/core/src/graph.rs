//! Model graph: an ordered DAG of layers with bound states, executed one
//! frame at a time.
//!
//! Frame 0 runs as a delta against a zero baseline with an all-true mask and
//! biases enabled, so the sparse code path is the only code path and still
//! produces the exact dense result while initializing every state buffer.
//! Later frames propagate sparse deltas end-to-end.

use std::time::Instant;

use crate::error::{EngineError, Result};
use crate::layers::{
    activate_truncate, delta_generate, dense_accumulate, sparse_add, sparse_affine, sparse_concat,
    sparse_conv2d, sparse_pool, sparse_upsample, Activation, ConvParams, DispatchConfig,
    ExecContext, LayerState, PoolKind, PoolParams, UpsampleMode,
};
use crate::mask::UpdateMask;
use crate::stats::{LayerStats, RunStats};
use crate::tensor::{FeatureTensor, Shape};
use crate::tile::TileSpec;

#[derive(Debug, Clone)]
pub enum LayerKind {
    /// Delta generation against the previous propagated input.
    Input { epsilon: f32, dilation_radius: usize },
    Conv { params: ConvParams, tiles: TileSpec },
    Activation { function: Activation, epsilon: f32 },
    Pool { params: PoolParams },
    Upsample { factor: usize, mode: UpsampleMode },
    Affine { scale: Vec<f32>, shift: Vec<f32> },
    Add,
    Concat,
    /// Dense accumulation of the final delta onto the previous output.
    Output,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "input",
            LayerKind::Conv { .. } => "conv",
            LayerKind::Activation { .. } => "activation",
            LayerKind::Pool { .. } => "pool",
            LayerKind::Upsample { .. } => "upsample",
            LayerKind::Affine { .. } => "affine",
            LayerKind::Add => "add",
            LayerKind::Concat => "concat",
            LayerKind::Output => "output",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerRecord {
    pub kind: LayerKind,
    pub inputs: Vec<usize>,
    pub output_shape: Shape,
    /// Index of the originating entry in the manifest, when loaded from one;
    /// batch-norm folding removes manifest layers, graph indices shift.
    pub origin: Option<usize>,
}

/// Builds and validates a graph: topological input references, shape
/// inference, state allocation.
pub struct GraphBuilder {
    name: String,
    input_shape: Shape,
    layers: Vec<LayerRecord>,
}

impl GraphBuilder {
    /// Starts a graph whose layer 0 generates deltas from raw frames.
    pub fn new(name: &str, input_shape: Shape, epsilon: f32, dilation_radius: usize) -> Self {
        let record = LayerRecord {
            kind: LayerKind::Input { epsilon, dilation_radius },
            inputs: vec![],
            output_shape: input_shape,
            origin: Some(0),
        };
        Self { name: name.to_string(), input_shape, layers: vec![record] }
    }

    fn shape_of(&self, idx: usize) -> Result<Shape> {
        self.layers
            .get(idx)
            .map(|l| l.output_shape)
            .ok_or_else(|| EngineError::Manifest(format!("dangling layer reference {idx}")))
    }

    /// Inferred output shape of an already-added layer.
    pub fn layer_shape(&self, idx: usize) -> Shape {
        self.layers[idx].output_shape
    }

    /// Appends a layer and returns its index. Input indices must refer to
    /// already-added layers, which keeps the list topologically ordered by
    /// construction.
    pub fn add(&mut self, kind: LayerKind, inputs: &[usize]) -> Result<usize> {
        self.add_with_origin(kind, inputs, None)
    }

    pub fn add_with_origin(
        &mut self,
        kind: LayerKind,
        inputs: &[usize],
        origin: Option<usize>,
    ) -> Result<usize> {
        let idx = self.layers.len();
        for &i in inputs {
            if i >= idx {
                return Err(EngineError::Manifest(format!(
                    "layer {idx} references layer {i} that is not defined before it"
                )));
            }
        }
        let arity_ok = match kind {
            LayerKind::Input { .. } => false, // only layer 0
            LayerKind::Add => inputs.len() == 2,
            LayerKind::Concat => !inputs.is_empty(),
            _ => inputs.len() == 1,
        };
        if !arity_ok {
            return Err(EngineError::Manifest(format!(
                "layer {idx} ({}) has wrong input count {}",
                kind.name(),
                inputs.len()
            )));
        }
        let output_shape = match &kind {
            LayerKind::Input { .. } => unreachable!("rejected above"),
            LayerKind::Conv { params, .. } => {
                params.validate()?;
                params.output_shape(self.shape_of(inputs[0])?)?
            }
            LayerKind::Activation { epsilon, .. } => {
                check_epsilon(*epsilon)?;
                self.shape_of(inputs[0])?
            }
            LayerKind::Pool { params } => params.output_shape(self.shape_of(inputs[0])?)?,
            LayerKind::Upsample { factor, .. } => {
                if *factor == 0 {
                    return Err(EngineError::InvalidParameter("upsample factor 0".into()));
                }
                let s = self.shape_of(inputs[0])?;
                Shape::new(s.batch, s.height * factor, s.width * factor, s.channels)
            }
            LayerKind::Affine { scale, shift } => {
                let s = self.shape_of(inputs[0])?;
                if scale.len() != s.channels || shift.len() != s.channels {
                    return Err(EngineError::ShapeMismatch(format!(
                        "affine factors ({}, {}) vs {} channels",
                        scale.len(),
                        shift.len(),
                        s.channels
                    )));
                }
                s
            }
            LayerKind::Add => {
                let a = self.shape_of(inputs[0])?;
                let b = self.shape_of(inputs[1])?;
                if a != b {
                    return Err(EngineError::ShapeMismatch(format!("add of {a} and {b}")));
                }
                a
            }
            LayerKind::Concat => {
                let first = self.shape_of(inputs[0])?;
                let mut channels = 0;
                for &i in inputs {
                    let s = self.shape_of(i)?;
                    if s.spatial() != first.spatial() {
                        return Err(EngineError::ShapeMismatch(format!(
                            "concat of {first} and {s}"
                        )));
                    }
                    channels += s.channels;
                }
                first.with_channels(channels)
            }
            LayerKind::Output => self.shape_of(inputs[0])?,
        };
        self.layers.push(LayerRecord { kind, inputs: inputs.to_vec(), output_shape, origin });
        Ok(idx)
    }

    pub fn build(self) -> Result<ModelGraph> {
        let last = self.layers.last().expect("builder always holds the input layer");
        if !matches!(last.kind, LayerKind::Output) {
            return Err(EngineError::Manifest("final layer must be the dense output accumulator".into()));
        }
        if self.layers.iter().filter(|l| matches!(l.kind, LayerKind::Output)).count() != 1 {
            return Err(EngineError::Manifest("exactly one output layer is required".into()));
        }
        if let LayerKind::Input { epsilon, .. } = self.layers[0].kind {
            check_epsilon(epsilon)?;
        }
        let states = self
            .layers
            .iter()
            .map(|l| match l.kind {
                LayerKind::Input { .. } | LayerKind::Output => {
                    Some(LayerState::values_only(l.output_shape))
                }
                LayerKind::Activation { .. } => Some(LayerState::with_truncation(l.output_shape)),
                LayerKind::Pool { params } if params.kind == PoolKind::Max => {
                    // Stores pre-pool inputs (shape of the pool's input).
                    None // replaced below, needs the input shape
                }
                _ => None,
            })
            .collect::<Vec<_>>();
        let mut states = states;
        for (i, l) in self.layers.iter().enumerate() {
            if let LayerKind::Pool { params } = &l.kind {
                if params.kind == PoolKind::Max {
                    let in_shape = self.layers[l.inputs[0]].output_shape;
                    states[i] = Some(LayerState::values_only(in_shape));
                }
            }
        }
        Ok(ModelGraph {
            name: self.name,
            input_shape: self.input_shape,
            layers: self.layers,
            states,
            frame_index: 0,
            frames_processed: 0,
            ctx: ExecContext { poison: cfg!(debug_assertions), ..Default::default() },
            // Flush accumulated float drift every few hundred frames.
            reset_interval: Some(DEFAULT_RESET_INTERVAL),
        })
    }
}

/// Frames between automatic state resets unless overridden.
pub const DEFAULT_RESET_INTERVAL: u64 = 500;

fn check_epsilon(eps: f32) -> Result<()> {
    if eps.is_finite() || eps < 0.0 {
        Ok(())
    } else {
        Err(EngineError::InvalidParameter(format!(
            "epsilon {eps} must be finite or the negative dense-mode sentinel"
        )))
    }
}

/// One video stream's model instance: layer list, parameters, per-layer
/// truncation thresholds and state buffers. `run_frame` is externally
/// synchronized; concurrent streams use separate instances.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    name: String,
    input_shape: Shape,
    layers: Vec<LayerRecord>,
    states: Vec<Option<LayerState>>,
    frame_index: u64,
    frames_processed: u64,
    ctx: ExecContext,
    reset_interval: Option<u64>,
}

impl ModelGraph {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerRecord] {
        &self.layers
    }

    pub fn frame_index(&self) -> u64 {
        self.frame_index
    }

    pub fn frames_processed(&self) -> u64 {
        self.frames_processed
    }

    /// Worker-pool width for tile-level parallelism; 1 is fully serial.
    pub fn set_threads(&mut self, threads: usize) -> Result<()> {
        let poison = self.ctx.poison;
        let dispatch = self.ctx.dispatch;
        self.ctx = ExecContext::with_threads(threads.max(1))?;
        self.ctx.poison = poison;
        self.ctx.dispatch = dispatch;
        Ok(())
    }

    /// NaN-fills masked-off pixels of every produced delta tensor.
    pub fn set_poison(&mut self, poison: bool) {
        self.ctx.poison = poison;
    }

    pub fn set_dispatch(&mut self, dispatch: DispatchConfig) {
        self.ctx.dispatch = dispatch;
    }

    /// Automatic state reset every `interval` frames to flush accumulated
    /// float drift; the frame after a reset is processed densely again.
    /// Defaults to [`DEFAULT_RESET_INTERVAL`]; `None` or `Some(0)` disables.
    pub fn set_reset_interval(&mut self, interval: Option<u64>) {
        self.reset_interval = interval.filter(|&i| i > 0);
    }

    /// Puts every truncation threshold (input layer included) at the negative
    /// sentinel: all pixels are reprocessed every frame, through the same
    /// delta machinery.
    pub fn set_dense_mode(&mut self) {
        for l in &mut self.layers {
            match &mut l.kind {
                LayerKind::Input { epsilon, .. } => *epsilon = -1.0,
                LayerKind::Activation { epsilon, .. } => *epsilon = -1.0,
                _ => {}
            }
        }
    }

    /// Indices of tunable truncation layers, in execution order.
    pub fn truncation_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| matches!(l.kind, LayerKind::Activation { .. }).then_some(i))
            .collect()
    }

    pub fn epsilon(&self, layer: usize) -> Option<f32> {
        match self.layers.get(layer)?.kind {
            LayerKind::Activation { epsilon, .. } => Some(epsilon),
            LayerKind::Input { epsilon, .. } => Some(epsilon),
            _ => None,
        }
    }

    pub fn set_epsilon(&mut self, layer: usize, eps: f32) -> Result<()> {
        check_epsilon(eps)?;
        match self.layers.get_mut(layer).map(|l| &mut l.kind) {
            Some(LayerKind::Activation { epsilon, .. }) => {
                *epsilon = eps;
                Ok(())
            }
            Some(LayerKind::Input { epsilon, .. }) => {
                *epsilon = eps;
                Ok(())
            }
            _ => Err(EngineError::InvalidParameter(format!(
                "layer {layer} carries no truncation threshold"
            ))),
        }
    }

    /// Zeroes all state buffers; the next frame is dense again.
    pub fn reset_buffers(&mut self) {
        for s in self.states.iter_mut().flatten() {
            s.reset();
        }
        self.frame_index = 0;
    }

    /// Runs one frame and returns the dense output with per-layer stats.
    pub fn run_frame(&mut self, frame: &FeatureTensor) -> Result<(FeatureTensor, RunStats)> {
        let (out, stats, _) = self.run_frame_impl(frame, false)?;
        Ok((out, stats))
    }

    /// As `run_frame`, additionally returning each layer's output update mask
    /// (the output layer reports the mask of the delta it consumed).
    pub fn run_frame_traced(
        &mut self,
        frame: &FeatureTensor,
    ) -> Result<(FeatureTensor, RunStats, Vec<UpdateMask>)> {
        let (out, stats, trace) = self.run_frame_impl(frame, true)?;
        Ok((out, stats, trace.expect("trace requested")))
    }

    fn run_frame_impl(
        &mut self,
        frame: &FeatureTensor,
        traced: bool,
    ) -> Result<(FeatureTensor, RunStats, Option<Vec<UpdateMask>>)> {
        if frame.shape() != self.input_shape {
            return Err(EngineError::ShapeMismatch(format!(
                "frame {} vs declared input {}",
                frame.shape(),
                self.input_shape
            )));
        }
        if let Some(interval) = self.reset_interval {
            if self.frame_index >= interval {
                self.reset_buffers();
            }
        }
        let first = self.frame_index == 0;
        let started = Instant::now();
        let mut registry: Vec<Option<(FeatureTensor, UpdateMask)>> = vec![None; self.layers.len()];
        let mut layer_stats: Vec<LayerStats> = Vec::with_capacity(self.layers.len());
        let mut trace = traced.then(Vec::new);
        let mut output = None;

        let ctx = self.ctx.clone();
        for i in 0..self.layers.len() {
            let record = &self.layers[i];
            let mut stats = LayerStats::new(i, record.kind.name());
            let fetch = |idx: usize| -> &(FeatureTensor, UpdateMask) {
                registry[idx].as_ref().expect("topological order guarantees produced inputs")
            };
            let produced: Option<(FeatureTensor, UpdateMask)> = match &record.kind {
                LayerKind::Input { epsilon, dilation_radius } => {
                    let state = self.states[i].as_mut().expect("input layer state");
                    let (d, m) =
                        delta_generate(frame, state, *epsilon, *dilation_radius, first, &ctx)?;
                    stats.mask_density = m.density();
                    stats.bytes_touched_estimate =
                        byte_estimate(2 * frame.shape().len(), m.count_true() * frame.shape().channels, &m);
                    Some((d, m))
                }
                LayerKind::Conv { params, tiles } => {
                    let (d, m) = fetch(record.inputs[0]);
                    Some(sparse_conv2d(d, m, params, tiles, first, &ctx, &mut stats)?)
                }
                LayerKind::Activation { function, epsilon } => {
                    let (d, m) = fetch(record.inputs[0]);
                    let active_in = m.count_true() * d.shape().channels;
                    let state = self.states[i].as_mut().expect("activation state");
                    let (out, mo) =
                        activate_truncate(d, m, state, *epsilon, *function, first, &ctx)?;
                    stats.mask_density = m.density();
                    stats.bytes_touched_estimate = byte_estimate(4 * active_in, active_in, &mo);
                    Some((out, mo))
                }
                LayerKind::Pool { params } => {
                    let (d, m) = fetch(record.inputs[0]);
                    let active_in = m.count_true() * d.shape().channels;
                    let state = self.states[i].as_mut();
                    let needs_state = params.kind == PoolKind::Max;
                    let (out, mo) = sparse_pool(
                        d,
                        m,
                        if needs_state { state } else { None },
                        params,
                        first,
                        &ctx,
                    )?;
                    stats.mask_density = m.density();
                    stats.bytes_touched_estimate =
                        byte_estimate(2 * active_in, mo.count_true() * out.shape().channels, &mo);
                    Some((out, mo))
                }
                LayerKind::Upsample { factor, mode } => {
                    let (d, m) = fetch(record.inputs[0]);
                    let (out, mo) = sparse_upsample(d, m, *factor, *mode, &ctx)?;
                    stats.mask_density = m.density();
                    stats.bytes_touched_estimate = byte_estimate(
                        m.count_true() * d.shape().channels,
                        mo.count_true() * out.shape().channels,
                        &mo,
                    );
                    Some((out, mo))
                }
                LayerKind::Affine { scale, shift } => {
                    let (d, m) = fetch(record.inputs[0]);
                    let active = m.count_true() * d.shape().channels;
                    let (out, mo) = sparse_affine(d, m, scale, shift, first, &ctx)?;
                    stats.mask_density = m.density();
                    stats.bytes_touched_estimate = byte_estimate(active, active, &mo);
                    Some((out, mo))
                }
                LayerKind::Add => {
                    let (ad, am) = fetch(record.inputs[0]);
                    let (bd, bm) = fetch(record.inputs[1]);
                    let (out, mo) = sparse_add(ad, am, bd, bm, &ctx)?;
                    stats.mask_density = mo.density();
                    let active = mo.count_true() * out.shape().channels;
                    stats.bytes_touched_estimate = byte_estimate(2 * active, active, &mo);
                    Some((out, mo))
                }
                LayerKind::Concat => {
                    let inputs: Vec<_> =
                        record.inputs.iter().map(|&idx| fetch(idx)).map(|(d, m)| (d, m)).collect();
                    let (out, mo) = sparse_concat(&inputs, &ctx)?;
                    stats.mask_density = mo.density();
                    let active = mo.count_true() * out.shape().channels;
                    stats.bytes_touched_estimate = byte_estimate(active, active, &mo);
                    Some((out, mo))
                }
                LayerKind::Output => {
                    let (d, m) = fetch(record.inputs[0]);
                    let state = self.states[i].as_mut().expect("output state");
                    let dense = dense_accumulate(d, m, state, first)?;
                    stats.mask_density = m.density();
                    let active = m.count_true() * d.shape().channels;
                    stats.bytes_touched_estimate = byte_estimate(active, active, m);
                    if let Some(t) = &mut trace {
                        t.push(m.clone());
                    }
                    output = Some(dense);
                    None
                }
            };
            if let Some((d, m)) = produced {
                if let Some(t) = &mut trace {
                    t.push(m.clone());
                }
                registry[i] = Some((d, m));
            }
            layer_stats.push(stats);
        }

        self.frame_index += 1;
        self.frames_processed += 1;
        let stats = RunStats {
            frame: self.frames_processed - 1,
            wall_time_secs: started.elapsed().as_secs_f64(),
            layers: layer_stats,
        };
        Ok((output.expect("graph has exactly one output layer"), stats, trace))
    }
}

/// Coarse traffic estimate for non-convolution layers: elements read plus
/// written times four bytes, plus one byte per output-mask pixel.
fn byte_estimate(elems_read: usize, elems_written: usize, mask_out: &UpdateMask) -> u64 {
    (4 * (elems_read + elems_written)) as u64 + mask_out.bytes().len() as u64
}
