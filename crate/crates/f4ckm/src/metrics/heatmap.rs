//! Channel-gain grid emitters: raw CSV and 16-bit binary PGM.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::MetricsError;

/// Write a row-major grid as CSV, one row per line.
pub fn write_grid_csv(
    path: &Path,
    width: usize,
    height: usize,
    values: &[f64],
) -> Result<(), MetricsError> {
    check_grid(width, height, values.len())?;
    let mut w = BufWriter::new(File::create(path)?);
    for row in 0..height {
        let cells: Vec<String> = (0..width)
            .map(|col| values[row * width + col].to_string())
            .collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Write a row-major grid as a binary 16-bit PGM (P5, maxval 65535,
/// big-endian samples per the format). Finite values are scaled linearly so
/// the minimum maps to 0 and the maximum to 65535; non-finite cells and
/// constant grids map to 0.
pub fn write_pgm16(
    path: &Path,
    width: usize,
    height: usize,
    values: &[f64],
) -> Result<(), MetricsError> {
    check_grid(width, height, values.len())?;
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n65535\n")?;
    for v in values {
        let level = if !v.is_finite() || span <= 0.0 {
            0u16
        } else {
            ((v - lo) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
        };
        w.write_all(&level.to_be_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn check_grid(width: usize, height: usize, len: usize) -> Result<(), MetricsError> {
    if width == 0 || height == 0 || len != width * height {
        return Err(MetricsError::Shape(format!(
            "grid {width}x{height} does not hold {len} values"
        )));
    }
    Ok(())
}
