//! Ray sampling for the field renderer: golden-spiral directions on the
//! sphere, uniform radial intervals, and per-antenna distance calibration.
//!
//! Directions come from the spherical Fibonacci grid: z_k = 1 - 2(k-1)/(K-1)
//! slices the sphere into layers of equal thickness while the azimuth
//! advances by the golden ratio per step, giving near-uniform coverage.
//! Radiators sit at depths j * range / N_r (j = 1..N_r); depth zero is
//! excluded because the free-space amplitude diverges there. Calibration
//! shifts each ray's depths by -p . omega per rx element p so that all
//! elements share one set of radiators.

use crate::channel::ArrayGeometry;

/// Golden ratio, the azimuth step multiplier of the spherical Fibonacci grid.
pub const GOLDEN_RATIO: f64 = 1.618033988749894848204586834365638118;

#[derive(Debug, thiserror::Error)]
pub enum SamplerError {
    #[error("golden-spiral sampling needs at least 2 directions, got {0}")]
    TooFewDirections(usize),
    #[error("grid resolution must be positive and divide 180 degrees, got {0}")]
    BadResolution(f64),
    #[error("need at least 1 radiator per ray")]
    NoRadiators,
    #[error("radial range must be positive, got {0} m")]
    BadRange(f64),
}

pub type Result<T> = std::result::Result<T, SamplerError>;

/// Spherical Fibonacci grid of K unit directions, k = 1..K.
pub fn sfg_directions(k: usize) -> Result<Vec<[f64; 3]>> {
    if k < 2 {
        return Err(SamplerError::TooFewDirections(k));
    }
    let mut out = Vec::with_capacity(k);
    for i in 1..=k {
        let z = 1.0 - 2.0 * (i as f64 - 1.0) / (k as f64 - 1.0);
        let r = (1.0 - z * z).max(0.0).sqrt();
        let az = 2.0 * std::f64::consts::PI * i as f64 * GOLDEN_RATIO;
        out.push([r * az.cos(), r * az.sin(), z]);
    }
    Ok(out)
}

/// Cell-centered latitude-longitude grid: colatitude (k + 1/2) * res,
/// longitude j * res. No direction sits exactly at a pole, so every cell
/// center is distinct. 10 degrees -> 18 * 36 = 648 directions.
pub fn ll_directions(resolution_deg: f64) -> Result<Vec<[f64; 3]>> {
    if !(resolution_deg > 0.0) {
        return Err(SamplerError::BadResolution(resolution_deg));
    }
    let bands = 180.0 / resolution_deg;
    if (bands - bands.round()).abs() > 1e-9 {
        return Err(SamplerError::BadResolution(resolution_deg));
    }
    let bands = bands.round() as usize;
    let lons = 2 * bands;
    let res = resolution_deg.to_radians();
    let mut out = Vec::with_capacity(bands * lons);
    for k in 0..bands {
        let colat = (k as f64 + 0.5) * res;
        let (s, c) = colat.sin_cos();
        for j in 0..lons {
            let lon = j as f64 * res;
            out.push([s * lon.cos(), s * lon.sin(), c]);
        }
    }
    Ok(out)
}

/// Uniform radial intervals: every step is range / N_r.
pub fn uniform_radial(n_r: usize, range_m: f64) -> Result<Vec<f64>> {
    if n_r == 0 {
        return Err(SamplerError::NoRadiators);
    }
    if !(range_m > 0.0) {
        return Err(SamplerError::BadRange(range_m));
    }
    Ok(vec![range_m / n_r as f64; n_r])
}

/// Per-antenna distance calibration for one ray direction: Delta d_m =
/// -p_m . omega over the rx element offsets p_m, replicated across the
/// N_b tx columns. A non-unit omega is normalized and flagged.
pub fn distance_calibration(
    rx: &ArrayGeometry,
    omega: [f64; 3],
    n_b: usize,
) -> (Vec<f64>, bool) {
    let norm = (omega[0] * omega[0] + omega[1] * omega[1] + omega[2] * omega[2]).sqrt();
    let renormalized = (norm - 1.0).abs() > 1e-12;
    let w = if renormalized {
        [omega[0] / norm, omega[1] / norm, omega[2] / norm]
    } else {
        omega
    };
    let offsets = rx.element_offsets();
    let mut out = Vec::with_capacity(offsets.len() * n_b);
    for p in &offsets {
        let dd = -(p[0] * w[0] + p[1] * w[1] + p[2] * w[2]);
        out.extend(std::iter::repeat(dd).take(n_b));
    }
    (out, renormalized)
}

/// Everything the renderer needs about the sampling pattern: directions,
/// shared radial intervals, cumulative depths, and per-ray calibration.
#[derive(Clone, Debug)]
pub struct RayBundle {
    /// Unit ray directions, one per sampled angle.
    pub directions: Vec<[f64; 3]>,
    /// Radial step sizes, shared by every ray.
    pub intervals: Vec<f64>,
    /// Depth of radiator j along any ray: (j + 1) * step, never zero.
    pub cumulative_depths: Vec<f64>,
    /// Per-ray (N_u, N_b) row-major calibration matrices.
    pub calibration: Vec<Vec<f64>>,
    pub n_u: usize,
    pub n_b: usize,
}

impl RayBundle {
    /// Sample `n_rays` golden-spiral directions with `n_radiators` uniform
    /// radial steps out to `range_m`, calibrated for the given rx array
    /// against `n_b` tx antennas.
    pub fn build(
        rx: &ArrayGeometry,
        n_b: usize,
        n_rays: usize,
        n_radiators: usize,
        range_m: f64,
    ) -> Result<RayBundle> {
        let directions = sfg_directions(n_rays)?;
        let intervals = uniform_radial(n_radiators, range_m)?;
        let mut cumulative_depths = Vec::with_capacity(n_radiators);
        let mut acc = 0.0;
        for d in &intervals {
            acc += d;
            cumulative_depths.push(acc);
        }
        let calibration = directions
            .iter()
            .map(|&w| distance_calibration(rx, w, n_b).0)
            .collect();
        Ok(RayBundle {
            directions,
            intervals,
            cumulative_depths,
            calibration,
            n_u: rx.len(),
            n_b,
        })
    }

    pub fn n_rays(&self) -> usize {
        self.directions.len()
    }

    pub fn n_radiators(&self) -> usize {
        self.intervals.len()
    }
}

/// Coefficient of variation (std / mean) of each direction's nearest-
/// neighbor great-circle distance. Smaller means more even coverage.
pub fn nn_angle_cv(dirs: &[[f64; 3]]) -> f64 {
    assert!(dirs.len() >= 2, "need at least two directions");
    let mut nn = Vec::with_capacity(dirs.len());
    for (i, a) in dirs.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, b) in dirs.iter().enumerate() {
            if i == j {
                continue;
            }
            let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
            best = best.min(dot.acos());
        }
        nn.push(best);
    }
    let mean = nn.iter().sum::<f64>() / nn.len() as f64;
    let var = nn.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / nn.len() as f64;
    var.sqrt() / mean
}
