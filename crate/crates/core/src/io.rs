//! Binary container formats.
//!
//! Tensor container (".dct"): magic `DCNT`, format version as u32 LE, then
//! batch/height/width/channels as four u32 LE, then the data as f32 LE in
//! batch-row-col-channel order. Masks use magic `DCNM`, three dimensions and
//! one byte per pixel. Weight blobs are raw f32 LE with no header.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{EngineError, Result};
use crate::mask::UpdateMask;
use crate::tensor::{FeatureTensor, Shape};

pub const TENSOR_MAGIC: &[u8; 4] = b"DCNT";
pub const MASK_MAGIC: &[u8; 4] = b"DCNM";
pub const CONTAINER_VERSION: u32 = 1;

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_tensor(path: &Path, tensor: &FeatureTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TENSOR_MAGIC)?;
    write_u32(&mut w, CONTAINER_VERSION)?;
    let s = tensor.shape();
    for dim in [s.batch, s.height, s.width, s.channels] {
        write_u32(&mut w, dim as u32)?;
    }
    for v in tensor.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<FeatureTensor> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(EngineError::Format(format!(
            "{}: bad tensor magic {magic:?}",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != CONTAINER_VERSION {
        return Err(EngineError::Format(format!("unsupported container version {version}")));
    }
    let batch = read_u32(&mut r)? as usize;
    let height = read_u32(&mut r)? as usize;
    let width = read_u32(&mut r)? as usize;
    let channels = read_u32(&mut r)? as usize;
    let shape = Shape::new(batch, height, width, channels);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != shape.len() * 4 {
        return Err(EngineError::Format(format!(
            "{}: payload {} bytes, shape {shape} needs {}",
            path.display(),
            bytes.len(),
            shape.len() * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    FeatureTensor::from_vec(shape, data)
}

pub fn write_mask(path: &Path, mask: &UpdateMask) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MASK_MAGIC)?;
    write_u32(&mut w, CONTAINER_VERSION)?;
    let (b, h, wd) = mask.spatial();
    for dim in [b, h, wd] {
        write_u32(&mut w, dim as u32)?;
    }
    w.write_all(mask.bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<UpdateMask> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MASK_MAGIC {
        return Err(EngineError::Format(format!("{}: bad mask magic {magic:?}", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != CONTAINER_VERSION {
        return Err(EngineError::Format(format!("unsupported container version {version}")));
    }
    let batch = read_u32(&mut r)? as usize;
    let height = read_u32(&mut r)? as usize;
    let width = read_u32(&mut r)? as usize;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != batch * height * width {
        return Err(EngineError::Format(format!(
            "{}: payload {} bytes, mask needs {}",
            path.display(),
            bytes.len(),
            batch * height * width
        )));
    }
    UpdateMask::from_bytes(batch, height, width, bytes)
}

/// Raw f32 LE weight blob.
pub fn read_blob(path: &Path) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(EngineError::Format(format!(
            "{}: blob length {} is not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_blob(path: &Path, data: &[f32]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}
