//! Model manifest: a JSON layer description plus a raw little-endian float
//! weight blob. Loading infers shapes, materializes weights and folds batch
//! normalization into a directly preceding convolution when that convolution
//! has no other consumer.
//!
//! The JSON schema is documented field by field in `docs/manifest.md`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};
use crate::graph::{GraphBuilder, LayerKind, ModelGraph};
use crate::layers::{Activation, ConvParams, PoolKind, PoolParams, UpsampleMode};
use crate::tensor::Shape;
use crate::tile::{ConvGeometry, TileSpec};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// Range of f32 elements inside the weight blob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub offset: usize,
    pub len: usize,
}

fn one() -> usize {
    1
}

fn default_bn_eps() -> f32 {
    1e-5
}

fn default_format_version() -> u32 {
    MANIFEST_FORMAT_VERSION
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifestLayer {
    Input {
        epsilon: f32,
        #[serde(default)]
        dilation_radius: usize,
    },
    Conv {
        inputs: Vec<usize>,
        out_channels: usize,
        kernel: [usize; 2],
        #[serde(default = "one")]
        stride: usize,
        #[serde(default = "one")]
        dilation: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "one")]
        groups: usize,
        weights: Span,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<Span>,
        /// Output-tile override; defaults by kernel geometry.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tile: Option<[usize; 2]>,
    },
    BatchNorm {
        inputs: Vec<usize>,
        gamma: Span,
        beta: Span,
        mean: Span,
        variance: Span,
        #[serde(default = "default_bn_eps")]
        eps: f32,
    },
    Activation {
        inputs: Vec<usize>,
        function: String,
        epsilon: f32,
    },
    Pool {
        inputs: Vec<usize>,
        pool: String,
        #[serde(default)]
        window: Option<[usize; 2]>,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Upsample {
        inputs: Vec<usize>,
        factor: usize,
        mode: String,
    },
    Affine {
        inputs: Vec<usize>,
        scale: Span,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shift: Option<Span>,
    },
    Add {
        inputs: Vec<usize>,
    },
    Concat {
        inputs: Vec<usize>,
    },
    Output {
        inputs: Vec<usize>,
    },
}

impl ManifestLayer {
    fn inputs(&self) -> &[usize] {
        match self {
            ManifestLayer::Input { .. } => &[],
            ManifestLayer::Conv { inputs, .. }
            | ManifestLayer::BatchNorm { inputs, .. }
            | ManifestLayer::Activation { inputs, .. }
            | ManifestLayer::Pool { inputs, .. }
            | ManifestLayer::Upsample { inputs, .. }
            | ManifestLayer::Affine { inputs, .. }
            | ManifestLayer::Add { inputs }
            | ManifestLayer::Concat { inputs }
            | ManifestLayer::Output { inputs } => inputs,
        }
    }

    fn spans(&self) -> Vec<Span> {
        match self {
            ManifestLayer::Conv { weights, bias, .. } => {
                let mut v = vec![*weights];
                v.extend(bias.iter().copied());
                v
            }
            ManifestLayer::BatchNorm { gamma, beta, mean, variance, .. } => {
                vec![*gamma, *beta, *mean, *variance]
            }
            ManifestLayer::Affine { scale, shift, .. } => {
                let mut v = vec![*scale];
                v.extend(shift.iter().copied());
                v
            }
            _ => vec![],
        }
    }
}

/// On-disk model description. `input_shape` is batch, height, width,
/// channels; `weights` is the blob path relative to the manifest file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelManifest {
    pub name: String,
    #[serde(default = "default_format_version")]
    pub format_version: u32,
    pub input_shape: [usize; 4],
    pub weights: String,
    pub layers: Vec<ManifestLayer>,
}

impl ModelManifest {
    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m = Self::from_json(&text)?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(EngineError::Manifest(format!(
                "unsupported manifest format version {}",
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn blob_path(&self, manifest_path: &Path) -> PathBuf {
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        dir.join(&self.weights)
    }

    /// Writes tuned activation epsilons back into a copy of the manifest.
    /// `layer_epsilons` pairs graph layer indices with thresholds; graph
    /// layers remember their manifest origin, which survives batch-norm
    /// folding.
    pub fn with_epsilons(&self, graph: &ModelGraph, layer_epsilons: &[(usize, f32)]) -> Result<Self> {
        let mut out = self.clone();
        for &(graph_idx, eps) in layer_epsilons {
            let origin = graph
                .layers()
                .get(graph_idx)
                .and_then(|l| l.origin)
                .ok_or_else(|| {
                    EngineError::Manifest(format!("graph layer {graph_idx} has no manifest origin"))
                })?;
            match out.layers.get_mut(origin) {
                Some(ManifestLayer::Activation { epsilon, .. }) => *epsilon = eps,
                _ => {
                    return Err(EngineError::Manifest(format!(
                        "manifest layer {origin} is not an activation layer"
                    )))
                }
            }
        }
        Ok(out)
    }
}

fn take(blob: &[f32], span: Span, what: &str) -> Result<Vec<f32>> {
    let end = span.offset.checked_add(span.len).ok_or_else(|| {
        EngineError::Manifest(format!("{what}: span overflows ({} + {})", span.offset, span.len))
    })?;
    if end > blob.len() {
        return Err(EngineError::Manifest(format!(
            "{what}: span [{}, {end}) exceeds blob length {}",
            span.offset,
            blob.len()
        )));
    }
    Ok(blob[span.offset..end].to_vec())
}

/// Per-channel batch-norm factors: scale = gamma / sqrt(var + eps),
/// shift = beta - mean * scale.
fn bn_factors(gamma: &[f32], beta: &[f32], mean: &[f32], var: &[f32], eps: f32) -> (Vec<f32>, Vec<f32>) {
    let scale: Vec<f32> =
        gamma.iter().zip(var).map(|(g, v)| g / (v + eps).sqrt()).collect();
    let shift: Vec<f32> =
        beta.iter().zip(mean).zip(&scale).map(|((b, m), s)| b - m * s).collect();
    (scale, shift)
}

/// Loads a manifest and its blob into an executable graph.
pub fn load_model(manifest_path: &Path) -> Result<(ModelGraph, ModelManifest)> {
    let manifest = ModelManifest::load(manifest_path)?;
    let blob = crate::io::read_blob(&manifest.blob_path(manifest_path))?;
    let graph = build_graph(&manifest, &blob)?;
    Ok((graph, manifest))
}

/// Builds the executable graph from an in-memory manifest and blob.
pub fn build_graph(manifest: &ModelManifest, blob: &[f32]) -> Result<ModelGraph> {
    validate_spans(manifest, blob)?;
    let n = manifest.layers.len();
    if n == 0 {
        return Err(EngineError::Manifest("manifest has no layers".into()));
    }
    let [b, h, w, c] = manifest.input_shape;
    let input_shape = Shape::new(b, h, w, c);
    if input_shape.is_empty() {
        return Err(EngineError::Manifest("input shape has a zero dimension".into()));
    }

    // How often each manifest layer is consumed; a batch norm folds into its
    // producing conv only when it is that conv's sole consumer.
    let mut consumers = vec![0usize; n];
    for layer in &manifest.layers {
        for &i in layer.inputs() {
            if i >= n {
                return Err(EngineError::Manifest(format!("dangling layer reference {i}")));
            }
            consumers[i] += 1;
        }
    }
    let mut folded_into: Vec<Option<usize>> = vec![None; n]; // conv idx -> bn idx
    for (bn_idx, layer) in manifest.layers.iter().enumerate() {
        if let ManifestLayer::BatchNorm { inputs, .. } = layer {
            if inputs.len() == 1 {
                let p = inputs[0];
                if matches!(manifest.layers[p], ManifestLayer::Conv { .. }) && consumers[p] == 1 {
                    folded_into[p] = Some(bn_idx);
                }
            }
        }
    }

    let ManifestLayer::Input { epsilon, dilation_radius } = manifest.layers[0] else {
        return Err(EngineError::Manifest("layer 0 must be the input layer".into()));
    };
    let mut builder = GraphBuilder::new(&manifest.name, input_shape, epsilon, dilation_radius);
    // manifest index -> graph index
    let mut mapping = vec![usize::MAX; n];
    mapping[0] = 0;

    for (idx, layer) in manifest.layers.iter().enumerate().skip(1) {
        let graph_inputs: Vec<usize> = layer
            .inputs()
            .iter()
            .map(|&i| {
                if i >= idx {
                    return Err(EngineError::Manifest(format!(
                        "layer {idx} references layer {i} that is not defined before it"
                    )));
                }
                Ok(mapping[i])
            })
            .collect::<Result<_>>()?;
        let kind = match layer {
            ManifestLayer::Input { .. } => {
                return Err(EngineError::Manifest("input layer may only appear at index 0".into()))
            }
            ManifestLayer::Conv {
                out_channels,
                kernel,
                stride,
                dilation,
                padding,
                groups,
                weights,
                bias,
                tile,
                inputs,
            } => {
                let in_shape = manifest_shape(&builder, mapping[inputs[0]]);
                let mut params = ConvParams {
                    in_channels: in_shape.channels,
                    out_channels: *out_channels,
                    geometry: ConvGeometry::new(kernel[0], kernel[1], *stride, *dilation, *padding),
                    groups: *groups,
                    weights: take(blob, *weights, "conv weights")?,
                    bias: bias.map(|s| take(blob, s, "conv bias")).transpose()?,
                };
                if let Some(bn_idx) = folded_into[idx] {
                    let ManifestLayer::BatchNorm { gamma, beta, mean, variance, eps, .. } =
                        &manifest.layers[bn_idx]
                    else {
                        unreachable!("folded_into only points at batch norms");
                    };
                    fold_batch_norm(&mut params, blob, *gamma, *beta, *mean, *variance, *eps)?;
                }
                let tiles = tile
                    .map(|[th, tw]| TileSpec::new(th, tw))
                    .transpose()?
                    .unwrap_or_else(|| TileSpec::default_for(&params.geometry));
                LayerKind::Conv { params, tiles }
            }
            ManifestLayer::BatchNorm { inputs, gamma, beta, mean, variance, eps } => {
                let p = inputs.first().copied().unwrap_or(usize::MAX);
                if p < n && folded_into[p] == Some(idx) {
                    // Folded into the conv; this node aliases its producer.
                    mapping[idx] = mapping[p];
                    continue;
                }
                let (scale, shift) = bn_factors(
                    &take(blob, *gamma, "bn gamma")?,
                    &take(blob, *beta, "bn beta")?,
                    &take(blob, *mean, "bn mean")?,
                    &take(blob, *variance, "bn variance")?,
                    *eps,
                );
                LayerKind::Affine { scale, shift }
            }
            ManifestLayer::Activation { function, epsilon, .. } => LayerKind::Activation {
                function: Activation::parse(function)?,
                epsilon: *epsilon,
            },
            ManifestLayer::Pool { pool, window, stride, padding, .. } => {
                let kind = PoolKind::parse(pool)?;
                let [wh, ww] = match (kind, window) {
                    (PoolKind::GlobalAvg, _) => [1, 1],
                    (_, Some(w)) => *w,
                    (_, None) => {
                        return Err(EngineError::Manifest(format!(
                            "pool layer {idx} requires a window"
                        )))
                    }
                };
                LayerKind::Pool {
                    params: PoolParams {
                        kind,
                        geometry: ConvGeometry::new(wh, ww, *stride, 1, *padding),
                    },
                }
            }
            ManifestLayer::Upsample { factor, mode, .. } => {
                LayerKind::Upsample { factor: *factor, mode: UpsampleMode::parse(mode)? }
            }
            ManifestLayer::Affine { scale, shift, .. } => {
                let scale = take(blob, *scale, "affine scale")?;
                let shift = match shift {
                    Some(s) => take(blob, *s, "affine shift")?,
                    None => vec![0.0; scale.len()],
                };
                LayerKind::Affine { scale, shift }
            }
            ManifestLayer::Add { .. } => LayerKind::Add,
            ManifestLayer::Concat { .. } => LayerKind::Concat,
            ManifestLayer::Output { .. } => LayerKind::Output,
        };
        mapping[idx] = builder.add_with_origin(kind, &graph_inputs, Some(idx))?;
    }
    builder.build()
}

fn manifest_shape(builder: &GraphBuilder, graph_idx: usize) -> Shape {
    builder.layer_shape(graph_idx)
}

fn fold_batch_norm(
    params: &mut ConvParams,
    blob: &[f32],
    gamma: Span,
    beta: Span,
    mean: Span,
    variance: Span,
    eps: f32,
) -> Result<()> {
    let gamma = take(blob, gamma, "bn gamma")?;
    let beta = take(blob, beta, "bn beta")?;
    let mean = take(blob, mean, "bn mean")?;
    let var = take(blob, variance, "bn variance")?;
    if gamma.len() != params.out_channels {
        return Err(EngineError::Manifest(format!(
            "batch norm over {} channels folded into conv with {} outputs",
            gamma.len(),
            params.out_channels
        )));
    }
    // w' = w * gamma / sqrt(var + eps); b' = (b - mean) * gamma / sqrt(var + eps) + beta
    let scale: Vec<f32> = gamma.iter().zip(&var).map(|(g, v)| g / (v + eps).sqrt()).collect();
    let per_oc = params.weights.len() / params.out_channels;
    for oc in 0..params.out_channels {
        for w in &mut params.weights[oc * per_oc..(oc + 1) * per_oc] {
            *w *= scale[oc];
        }
    }
    let bias = params.bias.take().unwrap_or_else(|| vec![0.0; params.out_channels]);
    params.bias = Some(
        bias.iter()
            .zip(&mean)
            .zip(&scale)
            .zip(&beta)
            .map(|(((b, m), s), bt)| (b - m) * s + bt)
            .collect(),
    );
    Ok(())
}

fn validate_spans(manifest: &ModelManifest, blob: &[f32]) -> Result<()> {
    let mut spans: Vec<Span> = manifest.layers.iter().flat_map(|l| l.spans()).collect();
    for s in &spans {
        if s.offset.saturating_add(s.len) > blob.len() {
            return Err(EngineError::Manifest(format!(
                "span [{}, {}) exceeds blob length {}",
                s.offset,
                s.offset + s.len,
                blob.len()
            )));
        }
    }
    spans.sort_by_key(|s| s.offset);
    for pair in spans.windows(2) {
        if pair[0].offset + pair[0].len > pair[1].offset {
            return Err(EngineError::Manifest(format!(
                "weight spans overlap: [{}, {}) and [{}, {})",
                pair[0].offset,
                pair[0].offset + pair[0].len,
                pair[1].offset,
                pair[1].offset + pair[1].len
            )));
        }
    }
    Ok(())
}
