#![allow(dead_code)] // helpers are shared across test binaries that use different subsets

//! Shared test support: fixture models/videos on disk and a small structural
//! JSON-schema checker covering the subset used by the committed schemas
//! (type, properties, required, items, additionalProperties).

use std::path::{Path, PathBuf};

use delta_infer_core::io::{write_blob, write_tensor};
use delta_infer_core::synth;
use delta_infer_core::tensor::{FeatureTensor, Shape};
use serde_json::Value;

/// Packs per-frame tensors into one container with batch = frame count.
pub fn frames_to_container(frames: &[FeatureTensor]) -> FeatureTensor {
    let s = frames[0].shape();
    let shape = Shape::new(frames.len(), s.height, s.width, s.channels);
    let mut data = Vec::with_capacity(shape.len());
    for f in frames {
        assert_eq!(f.shape(), s, "uniform frame shapes");
        data.extend_from_slice(f.data());
    }
    FeatureTensor::from_vec(shape, data).unwrap()
}

/// Writes a conv-stack model and a clip to `dir`; returns (manifest, frames)
/// paths.
#[allow(clippy::too_many_arguments)]
pub fn write_fixture(
    dir: &Path,
    seed: u64,
    shape: Shape,
    channels: usize,
    depth: usize,
    eps_in: f32,
    dilation: usize,
    eps_act: f32,
    frames: &[FeatureTensor],
) -> (PathBuf, PathBuf) {
    let (manifest, blob) =
        synth::conv_stack_manifest(seed, shape, channels, depth, eps_in, dilation, eps_act);
    let model_path = dir.join("model.json");
    write_blob(&dir.join("weights.bin"), &blob).unwrap();
    manifest.save(&model_path).unwrap();
    let frames_path = dir.join("clip.dct");
    write_tensor(&frames_path, &frames_to_container(frames)).unwrap();
    (model_path, frames_path)
}

/// Structural validation against a draft-07 style schema subset.
pub fn validate_schema(schema: &Value, value: &Value) -> Result<(), String> {
    validate_at(schema, value, "$")
}

fn validate_at(schema: &Value, value: &Value, path: &str) -> Result<(), String> {
    if let Some(ty) = schema.get("type").and_then(Value::as_str) {
        let ok = match ty {
            "object" => value.is_object(),
            "array" => value.is_array(),
            "string" => value.is_string(),
            "boolean" => value.is_boolean(),
            "integer" => value.is_i64() || value.is_u64(),
            "number" => value.is_number(),
            other => return Err(format!("{path}: unsupported schema type '{other}'")),
        };
        if !ok {
            return Err(format!("{path}: expected {ty}, got {value}"));
        }
    }
    if let Some(obj) = value.as_object() {
        if let Some(required) = schema.get("required").and_then(Value::as_array) {
            for key in required {
                let key = key.as_str().expect("schema 'required' entries are strings");
                if !obj.contains_key(key) {
                    return Err(format!("{path}: missing required field '{key}'"));
                }
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        if let Some(props) = props {
            for (key, sub) in obj {
                match props.get(key) {
                    Some(subschema) => validate_at(subschema, sub, &format!("{path}.{key}"))?,
                    None => {
                        if schema.get("additionalProperties") == Some(&Value::Bool(false)) {
                            return Err(format!("{path}: unexpected field '{key}'"));
                        }
                    }
                }
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), value.as_array()) {
        for (i, item) in arr.iter().enumerate() {
            validate_at(items, item, &format!("{path}[{i}]"))?;
        }
    }
    Ok(())
}

pub fn load_schema(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas").join(name);
    serde_json::from_str(&std::fs::read_to_string(&path).expect("schema file exists"))
        .expect("schema parses")
}

/// Serializes a report and strips the timing object, for determinism checks.
pub fn stable_json<T: serde::Serialize>(report: &T) -> Value {
    let mut v = serde_json::to_value(report).unwrap();
    if let Some(obj) = v.as_object_mut() {
        obj.remove("timing");
    }
    v
}
