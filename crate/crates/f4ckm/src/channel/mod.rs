//! MIMO-OFDM channel model: array geometry, frequency grids, and the
//! multipath superposition that turns path geometry into CSI tensors.
//!
//! Each propagation path contributes g_l * (c / 4 pi f d) * exp(-j 2 pi f d / c)
//! per antenna pair, where d is that pair's total path length. Summing paths
//! per subcarrier yields the channel H(f) in C^(N_u x N_b); stacking the used
//! subcarriers gives the full CSI tensor.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

mod image;
mod io;

pub use image::{enumerate_images, generate_dataset, sample_at, Dataset, ImageSource, Sample, SceneSpec};
pub use io::{read_dataset, write_dataset};

/// Speed of light in vacuum, m/s, exact by SI definition.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, thiserror::Error)]
pub enum ChannelError {
    #[error("frequency must be positive, got {0} Hz")]
    NonPositiveFrequency(f64),
    #[error("path distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("subcarrier frequencies must be strictly increasing: f[{idx}] = {a} >= f[{}] = {b}", idx + 1)]
    FrequenciesNotIncreasing { idx: usize, a: f64, b: f64 },
    #[error("CSI tensor holds a non-finite entry at flat index {0}")]
    NonFinite(usize),
    #[error("value buffer holds {got} entries, expected {want} for ({n_c} x {n_u} x {n_b})")]
    BadLength {
        want: usize,
        got: usize,
        n_c: usize,
        n_u: usize,
        n_b: usize,
    },
    #[error("path length matrix for path {path} holds {got} entries, expected {want}")]
    BadPathMatrix { path: usize, want: usize, got: usize },
    #[error("invalid scene: {0}")]
    BadScene(String),
    #[error("invalid OFDM grid: {0}")]
    BadGrid(String),
    #[error("dataset I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, ChannelError>;

/// Amplitude and (unwrapped) phase a single path of length `d_m` applies at
/// frequency `f_hz`: amplitude c / (4 pi f d), phase -2 pi f d / c.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreeSpace {
    pub amplitude: f64,
    pub phase: f64,
}

impl FreeSpace {
    pub fn phasor(&self) -> Complex64 {
        Complex64::from_polar(self.amplitude, self.phase)
    }
}

pub fn free_space_factor(f_hz: f64, d_m: f64) -> Result<FreeSpace> {
    if f_hz <= 0.0 {
        return Err(ChannelError::NonPositiveFrequency(f_hz));
    }
    if d_m <= 0.0 {
        return Err(ChannelError::NonPositiveDistance(d_m));
    }
    Ok(FreeSpace {
        amplitude: SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * f_hz * d_m),
        phase: -2.0 * std::f64::consts::PI * f_hz * d_m / SPEED_OF_LIGHT,
    })
}

/// Which side of the duplex gap a channel is evaluated on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Uplink,
    Downlink,
}

/// Which coordinate plane a uniform planar array spans.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayPlane {
    Xy,
    Yz,
    Xz,
}

impl ArrayPlane {
    pub fn axes(self) -> ([f64; 3], [f64; 3]) {
        match self {
            ArrayPlane::Xy => ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
            ArrayPlane::Yz => ([0.0, 1.0, 0.0], [0.0, 0.0, 1.0]),
            ArrayPlane::Xz => ([1.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
        }
    }
}

/// Uniform planar antenna array. Element (r, c) sits at
/// center + (r - (rows-1)/2) * spacing * u + (c - (cols-1)/2) * spacing * v,
/// so offsets are symmetric about the center and sum to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
    pub center: [f64; 3],
    pub plane: ArrayPlane,
}

impl ArrayGeometry {
    pub fn new(rows: usize, cols: usize, spacing: f64, center: [f64; 3], plane: ArrayPlane) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(ChannelError::BadScene(format!(
                "array must have at least one element, got {rows} x {cols}"
            )));
        }
        if spacing <= 0.0 {
            return Err(ChannelError::BadScene(format!(
                "antenna spacing must be positive, got {spacing}"
            )));
        }
        Ok(ArrayGeometry {
            rows,
            cols,
            spacing,
            center,
            plane,
        })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Element offsets relative to the array center, row-major.
    pub fn element_offsets(&self) -> Vec<[f64; 3]> {
        let (u, v) = self.plane.axes();
        let mut out = Vec::with_capacity(self.len());
        for r in 0..self.rows {
            let a = (r as f64 - (self.rows as f64 - 1.0) / 2.0) * self.spacing;
            for c in 0..self.cols {
                let b = (c as f64 - (self.cols as f64 - 1.0) / 2.0) * self.spacing;
                out.push([
                    a * u[0] + b * v[0],
                    a * u[1] + b * v[1],
                    a * u[2] + b * v[2],
                ]);
            }
        }
        out
    }

    pub fn element_positions(&self) -> Vec<[f64; 3]> {
        self.element_offsets()
            .into_iter()
            .map(|o| {
                [
                    self.center[0] + o[0],
                    self.center[1] + o[1],
                    self.center[2] + o[2],
                ]
            })
            .collect()
    }

    /// Moved copy, keeping orientation and spacing.
    pub fn at(&self, center: [f64; 3]) -> ArrayGeometry {
        ArrayGeometry {
            center,
            ..self.clone()
        }
    }
}

/// OFDM band plan shared by the uplink and downlink: same subcarrier layout,
/// downlink center shifted up by the duplex gap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfdmGrid {
    pub n_fft: usize,
    pub n_used: usize,
    pub spacing_hz: f64,
    pub uplink_center_hz: f64,
    pub duplex_gap_hz: f64,
}

impl OfdmGrid {
    pub fn new(
        n_fft: usize,
        n_used: usize,
        spacing_hz: f64,
        uplink_center_hz: f64,
        duplex_gap_hz: f64,
    ) -> Result<Self> {
        if n_used == 0 || n_used > n_fft {
            return Err(ChannelError::BadGrid(format!(
                "need 1 <= used subcarriers <= FFT size, got {n_used} of {n_fft}"
            )));
        }
        if spacing_hz <= 0.0 {
            return Err(ChannelError::BadGrid(format!(
                "subcarrier spacing must be positive, got {spacing_hz}"
            )));
        }
        let grid = OfdmGrid {
            n_fft,
            n_used,
            spacing_hz,
            uplink_center_hz,
            duplex_gap_hz,
        };
        let lowest = grid.uplink_frequencies()[0];
        if lowest <= 0.0 {
            return Err(ChannelError::BadGrid(format!(
                "lowest uplink subcarrier is {lowest} Hz; band must sit above DC"
            )));
        }
        Ok(grid)
    }

    pub fn downlink_center_hz(&self) -> f64 {
        self.uplink_center_hz + self.duplex_gap_hz
    }

    fn band(&self, center: f64) -> Vec<f64> {
        (0..self.n_used)
            .map(|k| center + (k as f64 - (self.n_used as f64 - 1.0) / 2.0) * self.spacing_hz)
            .collect()
    }

    /// Used uplink subcarrier frequencies, strictly increasing and symmetric
    /// about the uplink center.
    pub fn uplink_frequencies(&self) -> Vec<f64> {
        self.band(self.uplink_center_hz)
    }

    pub fn downlink_frequencies(&self) -> Vec<f64> {
        self.band(self.downlink_center_hz())
    }
}

/// CSI over used subcarriers and all antenna pairs: values are row-major
/// (N_c, N_u, N_b) with N_u receive (UE) and N_b transmit (BS) elements.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiTensor {
    pub frequencies: Vec<f64>,
    pub n_u: usize,
    pub n_b: usize,
    pub values: Vec<Complex64>,
}

impl CsiTensor {
    pub fn new(
        frequencies: Vec<f64>,
        n_u: usize,
        n_b: usize,
        values: Vec<Complex64>,
    ) -> Result<Self> {
        let want = frequencies.len() * n_u * n_b;
        if values.len() != want {
            return Err(ChannelError::BadLength {
                want,
                got: values.len(),
                n_c: frequencies.len(),
                n_u,
                n_b,
            });
        }
        for (i, w) in frequencies.windows(2).enumerate() {
            if w[0] >= w[1] {
                return Err(ChannelError::FrequenciesNotIncreasing {
                    idx: i,
                    a: w[0],
                    b: w[1],
                });
            }
        }
        if let Some(idx) = values.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(ChannelError::NonFinite(idx));
        }
        Ok(CsiTensor {
            frequencies,
            n_u,
            n_b,
            values,
        })
    }

    pub fn n_c(&self) -> usize {
        self.frequencies.len()
    }

    #[inline]
    pub fn at(&self, k: usize, u: usize, b: usize) -> Complex64 {
        self.values[(k * self.n_u + u) * self.n_b + b]
    }

    /// One subcarrier's N_u x N_b matrix, row-major.
    pub fn subcarrier(&self, k: usize) -> &[Complex64] {
        &self.values[k * self.n_u * self.n_b..(k + 1) * self.n_u * self.n_b]
    }

    /// Squared Frobenius norm over everything.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Per-subcarrier transpose: swaps the roles of the two antenna ends.
    pub fn transposed(&self) -> CsiTensor {
        let mut values = vec![Complex64::new(0.0, 0.0); self.values.len()];
        for k in 0..self.n_c() {
            for u in 0..self.n_u {
                for b in 0..self.n_b {
                    values[(k * self.n_b + b) * self.n_u + u] = self.at(k, u, b);
                }
            }
        }
        CsiTensor {
            frequencies: self.frequencies.clone(),
            n_u: self.n_b,
            n_b: self.n_u,
            values,
        }
    }
}

/// One propagation path: its bounce count, scalar gain, the total
/// tx-element-to-rx-element length for every antenna pair (N_u x N_b), and
/// the unit direction the wave arrives from at the rx array center.
#[derive(Clone, Debug)]
pub struct Path {
    pub reflections: u32,
    pub gain: f64,
    pub lengths: Vec<f64>,
    pub arrival: [f64; 3],
}

/// Ordered collection of paths between one tx/rx array placement.
#[derive(Clone, Debug)]
pub struct PathSet {
    pub n_u: usize,
    pub n_b: usize,
    pub paths: Vec<Path>,
}

impl PathSet {
    /// Swap the two antenna ends of every path (lengths transposed; arrival
    /// directions keep describing the original rx end).
    pub fn transposed(&self) -> PathSet {
        let paths = self
            .paths
            .iter()
            .map(|p| {
                let mut lengths = vec![0.0; p.lengths.len()];
                for u in 0..self.n_u {
                    for b in 0..self.n_b {
                        lengths[b * self.n_u + u] = p.lengths[u * self.n_b + b];
                    }
                }
                Path {
                    reflections: p.reflections,
                    gain: p.gain,
                    lengths,
                    arrival: p.arrival,
                }
            })
            .collect();
        PathSet {
            n_u: self.n_b,
            n_b: self.n_u,
            paths,
        }
    }
}

/// Per-antenna-pair straight-line distances by way of `image_point`, which
/// stands in for the (possibly mirrored) tx array center. Row-major
/// (N_u x N_b) over (rx element, tx element).
pub fn per_antenna_path_lengths(
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    image_point: [f64; 3],
) -> Vec<f64> {
    let tx_off = tx.element_offsets();
    let rx_pos = rx.element_positions();
    let mut out = Vec::with_capacity(rx_pos.len() * tx_off.len());
    for r in &rx_pos {
        for o in &tx_off {
            let dx = r[0] - (image_point[0] + o[0]);
            let dy = r[1] - (image_point[1] + o[1]);
            let dz = r[2] - (image_point[2] + o[2]);
            out.push((dx * dx + dy * dy + dz * dz).sqrt());
        }
    }
    out
}

/// Superpose paths into CSI at the used subcarriers of the chosen band.
pub fn multipath_channel(paths: &PathSet, grid: &OfdmGrid, band: Band) -> Result<CsiTensor> {
    let freqs = match band {
        Band::Uplink => grid.uplink_frequencies(),
        Band::Downlink => grid.downlink_frequencies(),
    };
    superpose_paths(paths, &freqs)
}

/// Superpose paths into CSI at an explicit list of frequencies.
pub fn superpose_paths(paths: &PathSet, frequencies: &[f64]) -> Result<CsiTensor> {
    let pairs = paths.n_u * paths.n_b;
    for (i, p) in paths.paths.iter().enumerate() {
        if p.lengths.len() != pairs {
            return Err(ChannelError::BadPathMatrix {
                path: i,
                want: pairs,
                got: p.lengths.len(),
            });
        }
    }
    let mut values = vec![Complex64::new(0.0, 0.0); frequencies.len() * pairs];
    for (k, &f) in frequencies.iter().enumerate() {
        let slab = &mut values[k * pairs..(k + 1) * pairs];
        for p in &paths.paths {
            for (slot, &d) in slab.iter_mut().zip(&p.lengths) {
                *slot += p.gain * free_space_factor(f, d)?.phasor();
            }
        }
    }
    CsiTensor::new(frequencies.to_vec(), paths.n_u, paths.n_b, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_space_factor_reference_point() {
        // direct evaluation at f = 2.4 GHz, d = 1 m with exact c
        let v = free_space_factor(2.4e9, 1.0).unwrap();
        assert!((v.amplitude - 9.940302415076964e-3).abs() < 1e-15);
        assert!((v.phase - -50.30028052684036).abs() < 1e-12);
    }

    #[test]
    fn free_space_amplitude_halves_at_double_distance() {
        let a = free_space_factor(5.9e9, 2.3).unwrap().amplitude;
        let b = free_space_factor(5.9e9, 4.6).unwrap().amplitude;
        assert!((a - 2.0 * b).abs() < 1e-18);
    }

    #[test]
    fn free_space_phase_is_minus_two_pi_at_one_wavelength() {
        let f = 2.4e9;
        let lam = SPEED_OF_LIGHT / f;
        let v = free_space_factor(f, lam).unwrap();
        assert!((v.phase + 2.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn free_space_rejects_nonpositive_inputs() {
        assert!(matches!(
            free_space_factor(0.0, 1.0),
            Err(ChannelError::NonPositiveFrequency(_))
        ));
        assert!(matches!(
            free_space_factor(1e9, 0.0),
            Err(ChannelError::NonPositiveDistance(_))
        ));
        assert!(free_space_factor(1e9, -1.0).is_err());
    }

    #[test]
    fn offsets_are_symmetric_and_sum_to_zero() {
        let g = ArrayGeometry::new(2, 2, 0.05, [1.0, 2.0, 3.0], ArrayPlane::Xy).unwrap();
        let off = g.element_offsets();
        assert_eq!(off.len(), 4);
        // hand geometry: half-spacing in each planar direction
        assert_eq!(off[0], [-0.025, -0.025, 0.0]);
        assert_eq!(off[3], [0.025, 0.025, 0.0]);
        let sum: [f64; 3] = off.iter().fold([0.0; 3], |acc, o| {
            [acc[0] + o[0], acc[1] + o[1], acc[2] + o[2]]
        });
        assert!(sum.iter().all(|s| s.abs() < 1e-15));
    }

    #[test]
    fn single_element_arrays_reduce_to_euclidean_distance() {
        let tx = ArrayGeometry::new(1, 1, 0.1, [0.0, 0.0, 0.0], ArrayPlane::Yz).unwrap();
        let rx = ArrayGeometry::new(1, 1, 0.1, [3.0, 4.0, 0.0], ArrayPlane::Xy).unwrap();
        let d = per_antenna_path_lengths(&tx, &rx, tx.center);
        assert_eq!(d.len(), 1);
        assert!((d[0] - 5.0).abs() < 1e-15);
    }

    #[test]
    fn pair_distances_match_hand_geometry() {
        let tx = ArrayGeometry::new(2, 1, 1.0, [0.0, 0.0, 0.0], ArrayPlane::Xy).unwrap();
        let rx = ArrayGeometry::new(2, 1, 1.0, [0.0, 10.0, 0.0], ArrayPlane::Xy).unwrap();
        // rows run along x: tx elements at x = -0.5 / +0.5, rx likewise at y = 10
        let d = per_antenna_path_lengths(&tx, &rx, tx.center);
        assert!((d[0] - 10.0).abs() < 1e-12); // aligned pair
        assert!((d[1] - (100.0f64 + 1.0).sqrt()).abs() < 1e-12); // diagonal
        assert!((d[2] - (100.0f64 + 1.0).sqrt()).abs() < 1e-12);
        assert!((d[3] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn ofdm_grid_bands_are_offset_by_duplex_gap() {
        let g = OfdmGrid::new(16, 8, 1.25e6, 2.415e9, 50e6).unwrap();
        let up = g.uplink_frequencies();
        let down = g.downlink_frequencies();
        assert_eq!(up.len(), 8);
        for (u, d) in up.iter().zip(&down) {
            assert!((d - u - 50e6).abs() < 1e-3);
        }
        // symmetric about the center
        assert!((up.iter().sum::<f64>() / 8.0 - 2.415e9).abs() < 1e-3);
        assert!(up.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn ofdm_grid_rejects_bad_sizes() {
        assert!(OfdmGrid::new(16, 0, 1e6, 2.4e9, 50e6).is_err());
        assert!(OfdmGrid::new(16, 17, 1e6, 2.4e9, 50e6).is_err());
        assert!(OfdmGrid::new(16, 8, -1.0, 2.4e9, 50e6).is_err());
        assert!(OfdmGrid::new(16, 8, 1e6, 1e6, 0.0).is_err()); // band dips below DC
    }

    #[test]
    fn csi_tensor_validates_frequencies_and_finiteness() {
        let vals = vec![Complex64::new(1.0, 0.0); 4];
        assert!(CsiTensor::new(vec![2.0e9, 1.0e9], 2, 1, vals.clone()).is_err());
        let mut bad = vals.clone();
        bad[2] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(
            CsiTensor::new(vec![1.0e9, 2.0e9], 2, 1, bad),
            Err(ChannelError::NonFinite(2))
        ));
        assert!(CsiTensor::new(vec![1.0e9], 2, 1, vals).is_err());
    }

    const UP: [f64; 3] = [0.0, 0.0, 1.0];

    fn los_paths(d: f64) -> PathSet {
        PathSet {
            n_u: 1,
            n_b: 1,
            paths: vec![Path {
                reflections: 0,
                gain: 1.0,
                lengths: vec![d],
                arrival: UP,
            }],
        }
    }

    #[test]
    fn multipath_single_los_matches_free_space() {
        let h = superpose_paths(&los_paths(4.2), &[2.4e9, 2.41e9]).unwrap();
        for (k, &f) in h.frequencies.iter().enumerate() {
            let want = free_space_factor(f, 4.2).unwrap().phasor();
            assert!((h.at(k, 0, 0) - want).norm() < 1e-18);
        }
    }

    #[test]
    fn multipath_banded_evaluation_matches_grid_frequencies() {
        let grid = OfdmGrid::new(16, 8, 1.25e6, 2.415e9, 50e6).unwrap();
        let up = multipath_channel(&los_paths(3.0), &grid, Band::Uplink).unwrap();
        let down = multipath_channel(&los_paths(3.0), &grid, Band::Downlink).unwrap();
        assert_eq!(up.frequencies, grid.uplink_frequencies());
        assert_eq!(down.frequencies, grid.downlink_frequencies());
        // higher band, same distance: slightly weaker amplitude
        assert!(down.at(0, 0, 0).norm() < up.at(0, 0, 0).norm());
    }

    #[test]
    fn two_paths_with_half_wavelength_detour_cancel() {
        let f = 2.4e9;
        let lam = SPEED_OF_LIGHT / f;
        let d1 = 3.0;
        let d2 = d1 + lam / 2.0;
        // gains scaled by the opposite path's distance equalize amplitudes;
        // the half-wave detour then flips the sign, so the pair cancels
        let set = PathSet {
            n_u: 1,
            n_b: 1,
            paths: vec![
                Path { reflections: 0, gain: 1.0 / d2, lengths: vec![d1], arrival: UP },
                Path { reflections: 1, gain: 1.0 / d1, lengths: vec![d2], arrival: UP },
            ],
        };
        let h = superpose_paths(&set, &[f]).unwrap();
        assert!(h.at(0, 0, 0).norm() < 1e-12);
    }

    #[test]
    fn three_path_brute_force_oracle() {
        let freqs = [2.4e9, 2.45e9, 2.5e9];
        let set = PathSet {
            n_u: 2,
            n_b: 1,
            paths: vec![
                Path { reflections: 0, gain: 1.0, lengths: vec![3.0, 3.1], arrival: UP },
                Path { reflections: 1, gain: 0.6, lengths: vec![4.5, 4.4], arrival: UP },
                Path { reflections: 2, gain: 0.36, lengths: vec![7.2, 7.3], arrival: UP },
            ],
        };
        let h = superpose_paths(&set, &freqs).unwrap();
        for (k, &f) in freqs.iter().enumerate() {
            for u in 0..2 {
                let mut want = Complex64::new(0.0, 0.0);
                for p in &set.paths {
                    let d = p.lengths[u];
                    let amp = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * f * d);
                    let ph = -2.0 * std::f64::consts::PI * f * d / SPEED_OF_LIGHT;
                    want += p.gain * Complex64::new(amp * ph.cos(), amp * ph.sin());
                }
                assert!((h.at(k, u, 0) - want).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn channel_is_linear_in_path_gains() {
        let freqs = [2.4e9, 2.46e9];
        let base = PathSet {
            n_u: 1,
            n_b: 2,
            paths: vec![
                Path { reflections: 0, gain: 0.8, lengths: vec![2.0, 2.2], arrival: UP },
                Path { reflections: 1, gain: 0.5, lengths: vec![3.3, 3.1], arrival: UP },
            ],
        };
        let mut scaled = base.clone();
        for p in &mut scaled.paths {
            p.gain *= 2.5;
        }
        let h1 = superpose_paths(&base, &freqs).unwrap();
        let h2 = superpose_paths(&scaled, &freqs).unwrap();
        for (a, b) in h1.values.iter().zip(&h2.values) {
            assert!((2.5 * a - b).norm() < 1e-16);
        }
    }

    #[test]
    fn channel_energy_decreases_with_los_length() {
        let freqs = [2.4e9];
        let mut last = f64::INFINITY;
        for d in [1.0, 2.0, 3.5, 7.0, 12.0] {
            let e = superpose_paths(&los_paths(d), &freqs).unwrap().energy();
            assert!(e < last, "energy should fall as the path lengthens");
            last = e;
        }
    }

    #[test]
    fn reciprocity_uplink_is_transpose_of_reverse_direction() {
        let set = PathSet {
            n_u: 2,
            n_b: 3,
            paths: vec![
                Path {
                    reflections: 0,
                    gain: 1.0,
                    lengths: vec![2.0, 2.1, 2.2, 2.3, 2.4, 2.5],
                    arrival: UP,
                },
                Path {
                    reflections: 1,
                    gain: 0.4,
                    lengths: vec![3.0, 3.3, 3.1, 3.4, 3.2, 3.5],
                    arrival: UP,
                },
            ],
        };
        let f = [2.4e9, 2.42e9];
        let forward = superpose_paths(&set, &f).unwrap();
        let reverse = superpose_paths(&set.transposed(), &f).unwrap();
        for k in 0..2 {
            for u in 0..2 {
                for b in 0..3 {
                    assert_eq!(forward.at(k, u, b), reverse.at(k, b, u));
                }
            }
        }
    }

    #[test]
    fn csi_transpose_round_trips() {
        let vals: Vec<Complex64> = (0..12)
            .map(|i| Complex64::new(i as f64, -(i as f64) * 0.5))
            .collect();
        let t = CsiTensor::new(vec![1e9, 2e9], 2, 3, vals).unwrap();
        let back = t.transposed().transposed();
        assert_eq!(t, back);
    }
}
