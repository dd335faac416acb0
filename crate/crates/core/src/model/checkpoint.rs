//! Binary checkpoints.
//!
//! Layout, little endian: the 8-byte magic `INMTCKPT`, a u32 format
//! version, a u32 length and the JSON encoding of the model config, a u32
//! tensor count, then per tensor a u16 name length, the UTF-8 name, u32 rows,
//! u32 cols and rows·cols f64 values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::params::{ModelConfig, ModelParams};
use super::ModelError;

const MAGIC: &[u8; 8] = b"INMTCKPT";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(p: &ModelParams, mut w: W) -> Result<(), ModelError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let config = serde_json::to_vec(&p.config).map_err(|e| ModelError::Format(e.to_string()))?;
    w.write_all(&(config.len() as u32).to_le_bytes())?;
    w.write_all(&config)?;
    let tensors = p.tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, m) in tensors {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(m.rows as u32).to_le_bytes())?;
        w.write_all(&(m.cols as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(m.data.len() * 8);
        for v in &m.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams, ModelError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(ModelError::Format(format!("unsupported version {version}")));
    }
    let len = read_u32(&mut r)? as usize;
    let mut config = vec![0u8; len];
    r.read_exact(&mut config)?;
    let config: ModelConfig = serde_json::from_slice(&config).map_err(|e| ModelError::Format(e.to_string()))?;
    let mut p = ModelParams::init(&config).zeros_like();
    let count = read_u32(&mut r)? as usize;
    let mut slots = p.tensors_mut();
    if count != slots.len() {
        return Err(ModelError::Format(format!("expected {} tensors, found {count}", slots.len())));
    }
    for (expected, m) in slots.iter_mut() {
        let mut nl = [0u8; 2];
        r.read_exact(&mut nl)?;
        let mut name = vec![0u8; u16::from_le_bytes(nl) as usize];
        r.read_exact(&mut name)?;
        if name != expected.as_bytes() {
            return Err(ModelError::Format(format!(
                "expected tensor {expected}, found {}",
                String::from_utf8_lossy(&name)
            )));
        }
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        if rows != m.rows || cols != m.cols {
            return Err(ModelError::Format(format!("tensor {expected} has shape {rows}x{cols}")));
        }
        let mut buf = vec![0u8; rows * cols * 8];
        r.read_exact(&mut buf)?;
        for (v, chunk) in m.data.iter_mut().zip(buf.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    drop(slots);
    Ok(p)
}

pub fn save_checkpoint(p: &ModelParams, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let mut buf = Vec::new();
    write_checkpoint(p, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams, ModelError> {
    let bytes = fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}
