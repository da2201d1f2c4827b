//! Checkpoint container: versioned header, JSON model config, named
//! single-precision parameter table, and an opaque training-state blob.
//!
//! Layout, all integers little-endian:
//!   magic "F4CW", u32 version,
//!   u32 config length + JSON bytes,
//!   u32 parameter count, then per parameter
//!     u16 name length + UTF-8 name, u8 rank, u32 dims, f32 values,
//!   u64 state length + state bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::WirareError;

const MAGIC: &[u8; 4] = b"F4CW";
const VERSION: u32 = 1;

/// Decoded checkpoint contents.
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub params: Vec<(String, Vec<usize>, Vec<f32>)>,
    pub state: Vec<u8>,
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), WirareError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let config = serde_json::to_vec(&ckpt.config)
        .map_err(|e| WirareError::Format(format!("config serialization: {e}")))?;
    w.write_all(&(config.len() as u32).to_le_bytes())?;
    w.write_all(&config)?;
    w.write_all(&(ckpt.params.len() as u32).to_le_bytes())?;
    for (name, shape, values) in &ckpt.params {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(WirareError::Format(format!("parameter name too long: {name}")));
        }
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&[shape.len() as u8])?;
        for dim in shape {
            w.write_all(&(*dim as u32).to_le_bytes())?;
        }
        let numel: usize = shape.iter().product();
        if values.len() != numel {
            return Err(WirareError::Format(format!(
                "parameter {name} has {} values for shape {shape:?}",
                values.len()
            )));
        }
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.write_all(&(ckpt.state.len() as u64).to_le_bytes())?;
    w.write_all(&ckpt.state)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, WirareError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(WirareError::Format(format!(
            "bad checkpoint magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(WirareError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let config_len = read_u32(&mut r)? as usize;
    let mut config_bytes = vec![0u8; config_len];
    r.read_exact(&mut config_bytes)?;
    let config = serde_json::from_slice(&config_bytes)
        .map_err(|e| WirareError::Format(format!("config parse: {e}")))?;
    let n_params = read_u32(&mut r)? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let mut len_bytes = [0u8; 2];
        r.read_exact(&mut len_bytes)?;
        let mut name_bytes = vec![0u8; u16::from_le_bytes(len_bytes) as usize];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| WirareError::Format(format!("parameter name: {e}")))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        let mut buf = [0u8; 4];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            values.push(f32::from_le_bytes(buf));
        }
        params.push((name, shape, values));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let mut state = vec![0u8; u64::from_le_bytes(len_bytes) as usize];
    r.read_exact(&mut state)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(WirareError::Format(
            "trailing bytes after checkpoint state".into(),
        ));
    }
    Ok(Checkpoint {
        config,
        params,
        state,
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, WirareError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
