//! Dataset container and sidecar: a compact little-endian binary holding
//! every sample's CSI grids and rx position, plus a JSON file with the
//! generating SceneSpec so any dataset can be traced back to its scene.
//!
//! Layout: magic "F4CK", version, dims (N_s, N_c, N_u, N_b) as u32, band
//! centers and subcarrier spacing as f64, then per sample the uplink grid,
//! the downlink grid (f32 interleaved re,im), and the rx position (3 f64).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path as FsPath, PathBuf};

use num_complex::Complex64;

use super::{ChannelError, CsiTensor, Dataset, Result, Sample, SceneSpec};

const MAGIC: &[u8; 4] = b"F4CK";
const VERSION: u32 = 1;

/// Sidecar lives next to the container with `.json` appended.
pub fn sidecar_path(path: &FsPath) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn format_err(msg: impl Into<String>) -> ChannelError {
    ChannelError::Format(msg.into())
}

pub fn write_dataset(path: &FsPath, ds: &Dataset) -> Result<()> {
    let spec = &ds.spec;
    let n_c = spec.grid.n_used;
    let n_u = spec.n_u();
    let n_b = spec.n_b();
    if ds.samples.len() != spec.n_samples {
        return Err(format_err(format!(
            "dataset holds {} samples but its spec says {}",
            ds.samples.len(),
            spec.n_samples
        )));
    }
    for (i, s) in ds.samples.iter().enumerate() {
        for (name, t) in [("uplink", &s.uplink), ("downlink", &s.downlink)] {
            if t.n_c() != n_c || t.n_u != n_u || t.n_b != n_b {
                return Err(format_err(format!(
                    "sample {i} {name} grid is ({}, {}, {}), spec wants ({n_c}, {n_u}, {n_b})",
                    t.n_c(),
                    t.n_u,
                    t.n_b
                )));
            }
        }
    }

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for v in [
        VERSION,
        ds.samples.len() as u32,
        n_c as u32,
        n_u as u32,
        n_b as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in [
        spec.grid.uplink_center_hz,
        spec.grid.downlink_center_hz(),
        spec.grid.spacing_hz,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for s in &ds.samples {
        for t in [&s.uplink, &s.downlink] {
            for c in &t.values {
                w.write_all(&(c.re as f32).to_le_bytes())?;
                w.write_all(&(c.im as f32).to_le_bytes())?;
            }
        }
        for &p in &s.rx_position {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    w.flush()?;

    let sidecar = BufWriter::new(File::create(sidecar_path(path))?);
    serde_json::to_writer_pretty(sidecar, spec)
        .map_err(|e| format_err(format!("sidecar write: {e}")))?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_grid(r: &mut impl Read, frequencies: &[f64], n_u: usize, n_b: usize) -> Result<CsiTensor> {
    let count = frequencies.len() * n_u * n_b;
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| {
            Complex64::new(
                f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64,
                f32::from_le_bytes([c[4], c[5], c[6], c[7]]) as f64,
            )
        })
        .collect();
    CsiTensor::new(frequencies.to_vec(), n_u, n_b, values)
}

pub fn read_dataset(path: &FsPath) -> Result<Dataset> {
    let sidecar = File::open(sidecar_path(path)).map_err(|e| {
        std::io::Error::new(
            e.kind(),
            format!("sidecar {}: {e}", sidecar_path(path).display()),
        )
    })?;
    let spec: SceneSpec = serde_json::from_reader(BufReader::new(sidecar))
        .map_err(|e| format_err(format!("sidecar parse: {e}")))?;
    spec.validate()?;

    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(format_err(format!("bad magic {magic:?}, want {MAGIC:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(format_err(format!(
            "unsupported container version {version}, expected {VERSION}"
        )));
    }
    let n_s = read_u32(&mut r)? as usize;
    let n_c = read_u32(&mut r)? as usize;
    let n_u = read_u32(&mut r)? as usize;
    let n_b = read_u32(&mut r)? as usize;
    let uplink_center = read_f64(&mut r)?;
    let downlink_center = read_f64(&mut r)?;
    let spacing = read_f64(&mut r)?;

    if n_s != spec.n_samples
        || n_c != spec.grid.n_used
        || n_u != spec.n_u()
        || n_b != spec.n_b()
        || uplink_center != spec.grid.uplink_center_hz
        || downlink_center != spec.grid.downlink_center_hz()
        || spacing != spec.grid.spacing_hz
    {
        return Err(format_err(
            "container header disagrees with its sidecar SceneSpec".to_string(),
        ));
    }

    let up_freqs = spec.grid.uplink_frequencies();
    let down_freqs = spec.grid.downlink_frequencies();
    let mut samples = Vec::with_capacity(n_s);
    for _ in 0..n_s {
        let uplink = read_grid(&mut r, &up_freqs, n_u, n_b)?;
        let downlink = read_grid(&mut r, &down_freqs, n_u, n_b)?;
        let rx_position = [read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?];
        samples.push(Sample {
            uplink,
            downlink,
            rx_position,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(format_err("trailing bytes after final sample".to_string()));
    }
    Ok(Dataset { spec, samples })
}
