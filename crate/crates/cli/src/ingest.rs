//! Frame ingestion: either a multi-frame ".dct" container (batch dimension =
//! frames, raw floats, no normalization) or a directory of 8-bit binary PNM
//! images (P5 grayscale / P6 RGB), normalized per channel.

use std::path::Path;

use anyhow::{bail, Context, Result};
use delta_infer_core::io::read_tensor;
use delta_infer_core::tensor::{FeatureTensor, Shape};

/// Per-channel normalization applied to image inputs: `(v / maxval - mean) /
/// scale`. Defaults to the ImageNet color statistics.
#[derive(Debug, Clone)]
pub struct NormalizeOptions {
    pub mean: Vec<f32>,
    pub scale: Vec<f32>,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        Self { mean: vec![0.485, 0.456, 0.406], scale: vec![0.229, 0.224, 0.225] }
    }
}

impl NormalizeOptions {
    fn factors(&self, channel: usize) -> (f32, f32) {
        let m = self.mean.get(channel).or_else(|| self.mean.first()).copied().unwrap_or(0.0);
        let s = self.scale.get(channel).or_else(|| self.scale.first()).copied().unwrap_or(1.0);
        (m, s)
    }
}

/// Loads a frame sequence from `source`. A `.dct` file is split along its
/// batch dimension; a directory is read as PNM images in filename order.
pub fn ingest_frames(source: &Path, normalize: &NormalizeOptions) -> Result<Vec<FeatureTensor>> {
    if source.is_dir() {
        ingest_image_dir(source, normalize)
    } else {
        ingest_container(source)
    }
}

fn ingest_container(path: &Path) -> Result<Vec<FeatureTensor>> {
    let tensor = read_tensor(path).with_context(|| format!("reading {}", path.display()))?;
    let s = tensor.shape();
    if s.batch == 0 {
        bail!("{}: container holds no frames", path.display());
    }
    let frame_shape = Shape::new(1, s.height, s.width, s.channels);
    let frame_len = frame_shape.len();
    Ok((0..s.batch)
        .map(|i| {
            let data = tensor.data()[i * frame_len..(i + 1) * frame_len].to_vec();
            FeatureTensor::from_vec(frame_shape, data).expect("slice length matches")
        })
        .collect())
}

fn ingest_image_dir(dir: &Path, normalize: &NormalizeOptions) -> Result<Vec<FeatureTensor>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("pnm") | Some("pgm") | Some("ppm")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("{}: no .pnm/.pgm/.ppm frames found", dir.display());
    }
    let mut frames = Vec::with_capacity(paths.len());
    let mut shape: Option<Shape> = None;
    for p in &paths {
        let frame = read_pnm(p, normalize)?;
        match shape {
            None => shape = Some(frame.shape()),
            Some(s) if s != frame.shape() => {
                bail!(
                    "{}: frame shape {} differs from {} of earlier frames",
                    p.display(),
                    frame.shape(),
                    s
                )
            }
            _ => {}
        }
        frames.push(frame);
    }
    Ok(frames)
}

/// Binary PNM: P5 (one channel) or P6 (three channels), 8-bit only.
pub fn read_pnm(path: &Path, normalize: &NormalizeOptions) -> Result<FeatureTensor> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut pos = 0usize;

    let mut token = |bytes: &[u8]| -> Result<String> {
        // Skip whitespace and '#' comment lines between header fields.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!("{}: truncated header", path.display());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = token(&bytes)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => bail!("{}: unsupported PNM magic '{other}' (only binary P5/P6)", path.display()),
    };
    let width: usize = token(&bytes)?.parse().context("PNM width")?;
    let height: usize = token(&bytes)?.parse().context("PNM height")?;
    let maxval: usize = token(&bytes)?.parse().context("PNM maxval")?;
    if maxval == 0 || maxval > 255 {
        bail!("{}: maxval {maxval} unsupported (8-bit only)", path.display());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let expected = width * height * channels;
    let raster = bytes.get(pos..pos + expected).ok_or_else(|| {
        anyhow::anyhow!("{}: raster truncated ({} bytes missing)", path.display(), expected)
    })?;

    let shape = Shape::new(1, height, width, channels);
    let mut data = Vec::with_capacity(shape.len());
    for px in raster.chunks_exact(channels) {
        for (c, &v) in px.iter().enumerate() {
            let (mean, scale) = normalize.factors(c);
            data.push((v as f32 / maxval as f32 - mean) / scale);
        }
    }
    Ok(FeatureTensor::from_vec(shape, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pnm(path: &Path, magic: &str, w: usize, h: usize, payload: &[u8]) {
        let mut bytes = format!("{magic}\n# test frame\n{w} {h}\n255\n").into_bytes();
        bytes.extend_from_slice(payload);
        std::fs::write(path, bytes).unwrap();
    }

    #[test]
    fn white_p6_is_all_ones_before_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("white.ppm");
        write_pnm(&p, "P6", 4, 4, &[255u8; 4 * 4 * 3]);
        let identity = NormalizeOptions { mean: vec![0.0; 3], scale: vec![1.0; 3] };
        let f = read_pnm(&p, &identity).unwrap();
        assert_eq!(f.shape(), Shape::new(1, 4, 4, 3));
        assert!(f.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn imagenet_normalization_is_applied() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gray.pgm");
        write_pnm(&p, "P5", 2, 2, &[128u8; 4]);
        let f = read_pnm(&p, &NormalizeOptions::default()).unwrap();
        let want = (128.0 / 255.0 - 0.485) / 0.229;
        assert!((f.at(0, 0, 0, 0) - want).abs() < 1e-6);
    }

    #[test]
    fn mixed_sizes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_pnm(&dir.path().join("a.pgm"), "P5", 4, 4, &[0u8; 16]);
        write_pnm(&dir.path().join("b.pgm"), "P5", 4, 5, &[0u8; 20]);
        let err = ingest_frames(dir.path(), &NormalizeOptions::default()).unwrap_err();
        assert!(err.to_string().contains("differs"));
    }

    #[test]
    fn truncated_raster_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("short.pgm");
        write_pnm(&p, "P5", 4, 4, &[0u8; 10]);
        assert!(read_pnm(&p, &NormalizeOptions::default()).is_err());
    }

    #[test]
    fn container_splits_batch_into_frames() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clip.dct");
        let shape = Shape::new(3, 2, 2, 1);
        let t = FeatureTensor::from_vec(shape, (0..12).map(|i| i as f32).collect()).unwrap();
        delta_infer_core::io::write_tensor(&p, &t).unwrap();
        let frames = ingest_frames(&p, &NormalizeOptions::default()).unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[1].data(), &[4.0, 5.0, 6.0, 7.0]);
    }
}
