//! Differentiable field renderer: turns per-radiator absorption and
//! radiation coefficients into predicted downlink CSI.
//!
//! Each ray i carries N_r radiators. Radiator j contributes
//! alpha_ij . T_ij . C_ij, where alpha = 1 - exp(-sigma) is absorption,
//! T_ij = dA_ij . exp(j dPhi_ij) . prod_{k<j} beta_ik is the accumulated
//! transmittance with beta = 1 - alpha, and the free-space pieces use the
//! calibrated distance dD + depth per antenna pair. The prediction is the
//! double sum over rays and radiators, reduced in a fixed direction-sorted
//! pairwise tree so ray order never changes the bits of the output.

use num_complex::Complex64;

use crate::channel::{OfdmGrid, SPEED_OF_LIGHT};
use crate::sampler::RayBundle;
use crate::tensor::{ComplexPair, DiffTensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum RendererError {
    #[error("sigma must be nonnegative, found {value} at flat index {index}")]
    NegativeSigma { index: usize, value: f64 },
    #[error("calibrated distance {value} m at ray {ray}, radiator {radiator} is not positive")]
    NonPositiveDistance {
        ray: usize,
        radiator: usize,
        value: f64,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, RendererError>;

/// Network output for every radiator: one nonnegative sigma and one complex
/// radiation coefficient per (radiator, subcarrier, antenna pair). Shape
/// (N_a * N_r, N_c, N_u, N_b), ray-major radiator layout.
#[derive(Clone, Debug)]
pub struct RadiatorField {
    pub sigma: DiffTensor,
    pub coeffs: ComplexPair,
}

impl RadiatorField {
    pub fn new(sigma: DiffTensor, coeffs: ComplexPair) -> Result<Self> {
        if sigma.shape() != coeffs.shape() {
            return Err(RendererError::Shape(format!(
                "sigma shape {:?} != coefficient shape {:?}",
                sigma.shape(),
                coeffs.shape()
            )));
        }
        if sigma.shape().len() != 4 {
            return Err(RendererError::Shape(format!(
                "field tensors must be rank 4, got {:?}",
                sigma.shape()
            )));
        }
        Ok(RadiatorField { sigma, coeffs })
    }
}

/// alpha = 1 - exp(-sigma), elementwise and differentiable. Negative sigma
/// is a contract violation from the producing network, not a math domain.
pub fn absorption(sigma: &DiffTensor) -> Result<DiffTensor> {
    if let Some(index) = sigma.values().iter().position(|&v| v < 0.0) {
        return Err(RendererError::NegativeSigma {
            index,
            value: sigma.values()[index],
        });
    }
    Ok(crate::tensor::one().sub(&sigma.neg().exp())?)
}

/// Free-space constants for one ray: amplitude and phase per (radiator,
/// subcarrier, antenna pair) at calibrated distance dd + depth.
fn ray_free_space(
    ray: usize,
    depths: &[f64],
    dd: &[f64],
    freqs: &[f64],
) -> Result<Vec<Complex64>> {
    let mut out = Vec::with_capacity(depths.len() * freqs.len() * dd.len());
    for (j, &depth) in depths.iter().enumerate() {
        for &f in freqs {
            let scale = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * f);
            let wavenum = -2.0 * std::f64::consts::PI * f / SPEED_OF_LIGHT;
            for &cal in dd {
                let dist = cal + depth;
                if dist <= 0.0 {
                    return Err(RendererError::NonPositiveDistance {
                        ray,
                        radiator: j,
                        value: dist,
                    });
                }
                out.push(Complex64::from_polar(scale / dist, wavenum * dist));
            }
        }
    }
    Ok(out)
}

fn cumulative_from_intervals(intervals: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    intervals
        .iter()
        .map(|d| {
            acc += d;
            acc
        })
        .collect()
}

/// Accumulated transmittance for one ray: T_j = dA_j . exp(j dPhi_j) .
/// prod_{k<j} beta_k, with the empty product for the first radiator.
/// `alpha` is (N_r, N_c, N_u, N_b); `dd` is the ray's (N_u * N_b)
/// calibration row; returns T with the same shape as alpha.
pub fn accumulated_transmittance(
    alpha: &DiffTensor,
    intervals: &[f64],
    dd: &[f64],
    freqs: &[f64],
) -> Result<ComplexPair> {
    let shape = alpha.shape().to_vec();
    if shape.len() != 4 || shape[0] != intervals.len() || shape[1] != freqs.len() {
        return Err(RendererError::Shape(format!(
            "alpha shape {:?} does not match {} radiators and {} subcarriers",
            shape,
            intervals.len(),
            freqs.len()
        )));
    }
    if shape[2] * shape[3] != dd.len() {
        return Err(RendererError::Shape(format!(
            "calibration row has {} entries, alpha wants {}",
            dd.len(),
            shape[2] * shape[3]
        )));
    }
    let depths = cumulative_from_intervals(intervals);
    let fs = ray_free_space(0, &depths, dd, freqs)?;
    let fs = ComplexPair::constant(&shape, &fs).map_err(RendererError::Tensor)?;

    let beta = crate::tensor::one().sub(alpha)?;
    let mut parts = Vec::with_capacity(shape.len());
    let mut cum: Option<DiffTensor> = None;
    for j in 0..shape[0] {
        let fs_j = fs.narrow(0, j, 1)?;
        let t_j = match &cum {
            None => fs_j,
            Some(c) => fs_j.mul_real(c)?,
        };
        parts.push(t_j);
        let beta_j = beta.narrow(0, j, 1)?;
        cum = Some(match cum {
            None => beta_j,
            Some(c) => c.mul(&beta_j)?,
        });
    }
    let re = DiffTensor::concat(&parts.iter().map(|p| p.re.clone()).collect::<Vec<_>>(), 0)?;
    let im = DiffTensor::concat(&parts.iter().map(|p| p.im.clone()).collect::<Vec<_>>(), 0)?;
    Ok(ComplexPair::new(re, im)?)
}

/// Precomputed per-scene rendering state: free-space constants for every
/// (ray, radiator, subcarrier, antenna pair) and the canonical ray
/// reduction order. Reusable across samples and training steps.
pub struct RendererContext {
    pub n_rays: usize,
    pub n_radiators: usize,
    pub n_c: usize,
    pub n_u: usize,
    pub n_b: usize,
    /// Per ray: (N_r, N_c, N_u, N_b) free-space factors as graph constants.
    fs: Vec<ComplexPair>,
    /// Ray indices sorted by direction; fixes the reduction tree.
    order: Vec<usize>,
}

impl RendererContext {
    /// Build for the downlink band of `grid`, the band the field predicts.
    pub fn new(bundle: &RayBundle, grid: &OfdmGrid) -> Result<Self> {
        Self::at_frequencies(bundle, &grid.downlink_frequencies())
    }

    pub fn at_frequencies(bundle: &RayBundle, freqs: &[f64]) -> Result<Self> {
        let depths = &bundle.cumulative_depths;
        let shape = [
            bundle.n_radiators(),
            freqs.len(),
            bundle.n_u,
            bundle.n_b,
        ];
        let mut fs = Vec::with_capacity(bundle.n_rays());
        for (i, dd) in bundle.calibration.iter().enumerate() {
            let vals = ray_free_space(i, depths, dd, freqs)?;
            fs.push(ComplexPair::constant(&shape, &vals).map_err(RendererError::Tensor)?);
        }
        let mut order: Vec<usize> = (0..bundle.n_rays()).collect();
        let dirs = bundle.directions.clone();
        order.sort_by(|&a, &b| {
            dirs[a][0]
                .total_cmp(&dirs[b][0])
                .then(dirs[a][1].total_cmp(&dirs[b][1]))
                .then(dirs[a][2].total_cmp(&dirs[b][2]))
        });
        Ok(RendererContext {
            n_rays: bundle.n_rays(),
            n_radiators: bundle.n_radiators(),
            n_c: freqs.len(),
            n_u: bundle.n_u,
            n_b: bundle.n_b,
            fs,
            order,
        })
    }

    /// Render the field into predicted CSI of shape (N_c, N_u, N_b).
    /// Differentiable with respect to sigma and the coefficients.
    pub fn aggregate(&self, field: &RadiatorField) -> Result<ComplexPair> {
        let want = [
            self.n_rays * self.n_radiators,
            self.n_c,
            self.n_u,
            self.n_b,
        ];
        if field.sigma.shape() != want.as_slice() {
            return Err(RendererError::Shape(format!(
                "field shape {:?} does not match context {:?}",
                field.sigma.shape(),
                want
            )));
        }
        let alpha = absorption(&field.sigma)?;
        let beta = field.sigma.neg().exp();

        let mut ray_sums: Vec<Option<ComplexPair>> = vec![None; self.n_rays];
        for i in 0..self.n_rays {
            let mut sum: Option<ComplexPair> = None;
            let mut cum: Option<DiffTensor> = None;
            for j in 0..self.n_radiators {
                let flat = i * self.n_radiators + j;
                let alpha_j = alpha.narrow(0, flat, 1)?;
                let c_j = field.coeffs.narrow(0, flat, 1)?;
                let fs_j = self.fs[i].narrow(0, j, 1)?;
                let t_j = match &cum {
                    None => fs_j,
                    Some(c) => fs_j.mul_real(c)?,
                };
                let term = t_j.complex_mul(&c_j)?.mul_real(&alpha_j)?;
                sum = Some(match sum {
                    None => term,
                    Some(s) => s.add(&term)?,
                });
                if j + 1 < self.n_radiators {
                    let beta_j = beta.narrow(0, flat, 1)?;
                    cum = Some(match cum {
                        None => beta_j,
                        Some(c) => c.mul(&beta_j)?,
                    });
                }
            }
            ray_sums[i] = sum;
        }

        // pairwise tree over direction-sorted rays: permutation-proof bits
        let mut level: Vec<ComplexPair> = self
            .order
            .iter()
            .map(|&i| ray_sums[i].take().expect("every ray has radiators"))
            .collect();
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len().div_ceil(2));
            for pair in level.chunks(2) {
                next.push(if pair.len() == 2 {
                    pair[0].add(&pair[1])?
                } else {
                    pair[0].clone()
                });
            }
            level = next;
        }
        let total = level.pop().expect("at least one ray");
        Ok(total.reshape(&[self.n_c, self.n_u, self.n_b])?)
    }
}

/// One-shot render without keeping a reusable context.
pub fn aggregate(
    field: &RadiatorField,
    bundle: &RayBundle,
    grid: &OfdmGrid,
) -> Result<ComplexPair> {
    RendererContext::new(bundle, grid)?.aggregate(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{
        free_space_factor, multipath_channel, ArrayGeometry, ArrayPlane, Band, Path, PathSet,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn absorption_closed_form_points() {
        let s = DiffTensor::constant(&[3], vec![0.0, std::f64::consts::LN_2, 40.0]).unwrap();
        let a = absorption(&s).unwrap();
        assert_eq!(a.values()[0], 0.0);
        assert!((a.values()[1] - 0.5).abs() < 1e-15);
        assert!((a.values()[2] - 1.0).abs() < 1e-15);
        let bad = DiffTensor::constant(&[2], vec![0.1, -0.3]).unwrap();
        assert!(matches!(
            absorption(&bad),
            Err(RendererError::NegativeSigma { index: 1, .. })
        ));
    }

    #[test]
    fn first_radiator_transmittance_is_free_space() {
        let freqs = [2.4e9, 2.465e9];
        let alpha = DiffTensor::constant(&[1, 2, 1, 1], vec![0.3, 0.3]).unwrap();
        let t = accumulated_transmittance(&alpha, &[1.7], &[0.0], &freqs).unwrap();
        let got = t.to_complex();
        for (k, &f) in freqs.iter().enumerate() {
            let want = free_space_factor(f, 1.7).unwrap().phasor();
            assert!((got[k] - want).norm() < 1e-16);
        }
    }

    #[test]
    fn opaque_radiator_blocks_everything_behind_it() {
        // alpha exactly 1 at the first radiator kills later transmittance
        let alpha =
            DiffTensor::constant(&[3, 1, 1, 1], vec![1.0, 0.2, 0.7]).unwrap();
        let t = accumulated_transmittance(&alpha, &[1.0, 1.0, 1.0], &[0.0], &[2.4e9]).unwrap();
        let got = t.to_complex();
        assert!(got[0].norm() > 0.0);
        assert_eq!(got[1], Complex64::new(0.0, 0.0));
        assert_eq!(got[2], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn transmittance_matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n_r = 3;
        let freqs = [2.4e9, 2.45e9];
        let n_u = 2;
        let n_b = 2;
        let alpha_vals: Vec<f64> = (0..n_r * freqs.len() * n_u * n_b)
            .map(|_| rng.gen_range(0.0..0.9))
            .collect();
        let dd: Vec<f64> = (0..n_u * n_b).map(|_| rng.gen_range(-0.02..0.02)).collect();
        let intervals = [0.9, 1.1, 1.3];
        let alpha = DiffTensor::constant(&[n_r, freqs.len(), n_u, n_b], alpha_vals.clone()).unwrap();
        let t = accumulated_transmittance(&alpha, &intervals, &dd, &freqs).unwrap();
        let got = t.to_complex();

        // term-by-term scalar reference
        let depths = [0.9, 2.0, 3.3];
        for k in 0..freqs.len() {
            for ub in 0..n_u * n_b {
                let mut running = 1.0;
                for j in 0..n_r {
                    let dist = dd[ub] + depths[j];
                    let amp = crate::channel::SPEED_OF_LIGHT
                        / (4.0 * std::f64::consts::PI * freqs[k] * dist);
                    let ph =
                        -2.0 * std::f64::consts::PI * freqs[k] * dist / crate::channel::SPEED_OF_LIGHT;
                    let want = Complex64::from_polar(amp, ph) * running;
                    let idx = (j * freqs.len() + k) * n_u * n_b + ub;
                    assert!(
                        (got[idx] - want).norm() <= 1e-15 * want.norm().max(1.0),
                        "mismatch at radiator {j}"
                    );
                    running *= 1.0 - alpha_vals[idx];
                }
            }
        }
    }

    #[test]
    fn transmittance_rejects_nonpositive_calibrated_distance() {
        let alpha = DiffTensor::constant(&[1, 1, 1, 1], vec![0.5]).unwrap();
        let err = accumulated_transmittance(&alpha, &[0.25], &[-0.3], &[2.4e9]);
        assert!(matches!(
            err,
            Err(RendererError::NonPositiveDistance { radiator: 0, .. })
        ));
    }

    fn micro_bundle(n_rays: usize, n_radiators: usize) -> (RayBundle, OfdmGrid) {
        let rx = ArrayGeometry::new(2, 2, 0.062, [0.0; 3], ArrayPlane::Xy).unwrap();
        let bundle = RayBundle::build(&rx, 4, n_rays, n_radiators, 9.0).unwrap();
        let grid = OfdmGrid::new(16, 4, 1.25e6, 2.415e9, 50e6).unwrap();
        (bundle, grid)
    }

    fn random_field(
        shape: &[usize],
        rng: &mut ChaCha8Rng,
        as_params: bool,
    ) -> RadiatorField {
        let n: usize = shape.iter().product();
        let sig: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.5)).collect();
        let re: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let im: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let build = |v: Vec<f64>| {
            if as_params {
                DiffTensor::param(shape, v).unwrap()
            } else {
                DiffTensor::constant(shape, v).unwrap()
            }
        };
        RadiatorField::new(
            build(sig),
            ComplexPair::new(build(re), build(im)).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_sigma_renders_exactly_zero() {
        let (bundle, grid) = micro_bundle(3, 2);
        let shape = [6, 4, 4, 4];
        let sigma = DiffTensor::constant(&shape, vec![0.0; 384]).unwrap();
        let coeffs = ComplexPair::constant(
            &shape,
            &(0..384)
                .map(|i| Complex64::new(i as f64, -(i as f64)))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let field = RadiatorField::new(sigma, coeffs).unwrap();
        let out = aggregate(&field, &bundle, &grid).unwrap();
        assert!(out.to_complex().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn renders_exact_los_channel_from_analytic_construction() {
        // scene: rx 2x2 at origin, tx 2x2 set along ray 0 at radiator depth 4
        let (bundle, grid) = micro_bundle(4, 8);
        let w = bundle.directions[0];
        let depth_idx = 3;
        let depth = bundle.cumulative_depths[depth_idx];
        let tx_center = [w[0] * depth, w[1] * depth, w[2] * depth];
        let tx = ArrayGeometry::new(2, 2, 0.062, tx_center, ArrayPlane::Yz).unwrap();
        let rx = ArrayGeometry::new(2, 2, 0.062, [0.0; 3], ArrayPlane::Xy).unwrap();
        let lengths = crate::channel::per_antenna_path_lengths(&tx, &rx, tx_center);
        let paths = PathSet {
            n_u: 4,
            n_b: 4,
            paths: vec![Path {
                reflections: 0,
                gain: 1.0,
                lengths,
                arrival: w,
            }],
        };
        let truth = multipath_channel(&paths, &grid, Band::Downlink).unwrap();

        // sigma = ln 2 at the chosen radiator makes alpha exactly 1/2, so
        // C = 2 H / FS cancels the renderer's own free-space factor
        let n_c = 4;
        let (n_u, n_b) = (4, 4);
        let total = bundle.n_rays() * bundle.n_radiators();
        let shape = [total, n_c, n_u, n_b];
        let mut sigma = vec![0.0; total * n_c * n_u * n_b];
        let mut coeffs = vec![Complex64::new(0.0, 0.0); sigma.len()];
        let freqs = grid.downlink_frequencies();
        let flat = depth_idx; // ray 0 block
        for k in 0..n_c {
            for ub in 0..n_u * n_b {
                let idx = (flat * n_c + k) * n_u * n_b + ub;
                sigma[idx] = std::f64::consts::LN_2;
                let dist = bundle.calibration[0][ub] + depth;
                let fs = free_space_factor(freqs[k], dist).unwrap().phasor();
                coeffs[idx] = 2.0 * truth.values[k * n_u * n_b + ub] / fs;
            }
        }
        let field = RadiatorField::new(
            DiffTensor::constant(&shape, sigma).unwrap(),
            ComplexPair::constant(&shape, &coeffs).unwrap(),
        )
        .unwrap();
        let out = aggregate(&field, &bundle, &grid).unwrap().to_complex();
        let mut num = 0.0;
        let mut den = 0.0;
        for (got, want) in out.iter().zip(&truth.values) {
            num += (got - want).norm_sqr();
            den += want.norm_sqr();
        }
        let rel = (num / den).sqrt();
        assert!(rel < 1e-6, "relative error {rel}");
    }

    #[test]
    fn aggregate_is_linear_in_coefficients() {
        let (bundle, grid) = micro_bundle(3, 3);
        let ctx = RendererContext::new(&bundle, &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let field = random_field(&[9, 4, 4, 4], &mut rng, false);
        let base = ctx.aggregate(&field).unwrap().to_complex();

        // real power-of-two scale: bit-exact distributivity
        let doubled = RadiatorField::new(
            field.sigma.clone(),
            ComplexPair::new(
                field.coeffs.re.scale(2.0),
                field.coeffs.im.scale(2.0),
            )
            .unwrap(),
        )
        .unwrap();
        let got = ctx.aggregate(&doubled).unwrap().to_complex();
        for (g, b) in got.iter().zip(&base) {
            assert_eq!(*g, 2.0 * b);
        }

        // general complex scale: tight relative tolerance
        let a = Complex64::new(0.37, -1.21);
        let scaled_vals: Vec<Complex64> =
            field.coeffs.to_complex().iter().map(|c| a * c).collect();
        let scaled = RadiatorField::new(
            field.sigma.clone(),
            ComplexPair::constant(&[9, 4, 4, 4], &scaled_vals).unwrap(),
        )
        .unwrap();
        let got = ctx.aggregate(&scaled).unwrap().to_complex();
        for (g, b) in got.iter().zip(&base) {
            let want = a * b;
            assert!((g - want).norm() <= 1e-12 * want.norm().max(1e-12));
        }
    }

    #[test]
    fn ray_permutation_leaves_output_bit_identical() {
        let (bundle, grid) = micro_bundle(5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shape = [10, 4, 4, 4];
        let field = random_field(&shape, &mut rng, false);
        let base = aggregate(&field, &bundle, &grid).unwrap();

        // permute rays and the matching radiator blocks
        let perm = [3usize, 0, 4, 1, 2];
        let mut shuffled = bundle.clone();
        shuffled.directions = perm.iter().map(|&i| bundle.directions[i]).collect();
        shuffled.calibration = perm.iter().map(|&i| bundle.calibration[i].clone()).collect();
        let block = 2 * 4 * 4 * 4;
        let permute = |vals: &[f64]| -> Vec<f64> {
            let mut out = Vec::with_capacity(vals.len());
            for &i in &perm {
                out.extend_from_slice(&vals[i * block..(i + 1) * block]);
            }
            out
        };
        let field2 = RadiatorField::new(
            DiffTensor::constant(&shape, permute(field.sigma.values())).unwrap(),
            ComplexPair::new(
                DiffTensor::constant(&shape, permute(field.coeffs.re.values())).unwrap(),
                DiffTensor::constant(&shape, permute(field.coeffs.im.values())).unwrap(),
            )
            .unwrap(),
        )
        .unwrap();
        let swapped = aggregate(&field2, &shuffled, &grid).unwrap();
        assert_eq!(base.re.values(), swapped.re.values());
        assert_eq!(base.im.values(), swapped.im.values());
    }

    #[test]
    fn raising_sigma_weakens_downstream_transmittance() {
        let freqs = [2.4e9];
        let intervals = [1.0, 1.0, 1.0];
        let t_at = |s0: f64| -> Vec<f64> {
            let sigma = DiffTensor::constant(&[3, 1, 1, 1], vec![s0, 0.4, 0.4]).unwrap();
            let alpha = absorption(&sigma).unwrap();
            accumulated_transmittance(&alpha, &intervals, &[0.0], &freqs)
                .unwrap()
                .to_complex()
                .iter()
                .map(|c| c.norm())
                .collect()
        };
        let weak = t_at(0.2);
        let strong = t_at(1.5);
        assert_eq!(weak[0], strong[0]); // first radiator unaffected
        assert!(strong[1] < weak[1]);
        assert!(strong[2] < weak[2]);
    }

    #[test]
    fn phase_slope_across_subcarriers_encodes_depth() {
        // single ray, single radiator, 1x1 rx: slope = -2 pi d / c per Hz
        let rx = ArrayGeometry::new(1, 1, 0.06, [0.0; 3], ArrayPlane::Xy).unwrap();
        let bundle = RayBundle::build(&rx, 1, 2, 1, 3.0).unwrap();
        let grid = OfdmGrid::new(16, 8, 1.25e6, 2.415e9, 50e6).unwrap();
        let shape = [2, 8, 1, 1];
        // only ray 0 radiates; flat sigma and coefficients across frequency
        let mut sigma = vec![0.0; 16];
        for v in sigma.iter_mut().take(8) {
            *v = 0.9;
        }
        let coeffs = vec![Complex64::new(0.8, 0.3); 16];
        let field = RadiatorField::new(
            DiffTensor::constant(&shape, sigma).unwrap(),
            ComplexPair::constant(&shape, &coeffs).unwrap(),
        )
        .unwrap();
        let out = aggregate(&field, &bundle, &grid).unwrap().to_complex();
        let depth = bundle.cumulative_depths[0];
        let want_slope = -2.0 * std::f64::consts::PI * depth / SPEED_OF_LIGHT;
        for pair in out.windows(2) {
            let dphi = (pair[1] / pair[0]).arg();
            let slope = dphi / grid.spacing_hz;
            assert!(
                (slope - want_slope).abs() < 1e-3 * want_slope.abs(),
                "slope {slope} want {want_slope}"
            );
        }
    }

    #[test]
    fn render_gradients_match_finite_differences() {
        let (bundle, grid) = micro_bundle(2, 3);
        let ctx = RendererContext::new(&bundle, &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let field = random_field(&[6, 4, 4, 4], &mut rng, true);
        let leaves = vec![
            field.sigma.clone(),
            field.coeffs.re.clone(),
            field.coeffs.im.clone(),
        ];
        let report = crate::tensor::grad_check(
            |xs: &[DiffTensor]| {
                let f = RadiatorField::new(
                    xs[0].clone(),
                    ComplexPair::new(xs[1].clone(), xs[2].clone())?,
                )
                .map_err(|e| TensorError::Invalid {
                    op: "radiator_field",
                    msg: e.to_string(),
                })?;
                let out = ctx.aggregate(&f).map_err(|e| TensorError::Invalid {
                    op: "aggregate",
                    msg: e.to_string(),
                })?;
                // scale into a numerically comfortable range for the probe
                out.norm_sq()?.sum_all().scale(1e4).reshape(&[1])
            },
            &leaves,
            1e-6,
            6,
            417,
        )
        .unwrap();
        assert!(
            report.passes(1e-3),
            "max rel err {}",
            report.max_rel_err
        );
    }
}
