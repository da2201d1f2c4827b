//! Query tensors fed to the field network.
//!
//! The measured uplink CSI is replicated along every ray and radiator to form
//! raw queries; two constant indicator tensors carry the sampling geometry:
//! gamma holds the ray direction per angular sample and eta the radial step
//! sizes per depth sample.

use crate::channel::CsiTensor;
use crate::sampler::RayBundle;
use crate::tensor::{DiffTensor, Result as TensorResult};

/// Replicate uplink CSI into raw queries of shape
/// (N_a * N_r, 2 * N_c, N_u, N_b): real parts on the first N_c channels,
/// imaginary parts on the rest, identical for every ray and radiator.
pub fn build_raw_queries(uplink: &CsiTensor, bundle: &RayBundle) -> TensorResult<DiffTensor> {
    let n_c = uplink.n_c();
    let (n_u, n_b) = (uplink.n_u, uplink.n_b);
    let spatial = n_u * n_b;
    let mut block = Vec::with_capacity(2 * n_c * spatial);
    for k in 0..n_c {
        block.extend(uplink.subcarrier(k).iter().map(|h| h.re));
    }
    for k in 0..n_c {
        block.extend(uplink.subcarrier(k).iter().map(|h| h.im));
    }
    let copies = bundle.n_rays() * bundle.n_radiators();
    let mut values = Vec::with_capacity(copies * block.len());
    for _ in 0..copies {
        values.extend_from_slice(&block);
    }
    DiffTensor::constant(&[copies, 2 * n_c, n_u, n_b], values)
}

/// Angular indicator of shape (N_a * N_r, 3, N_u, N_b): the unit ray
/// direction as three channels, constant across radiators and the spatial
/// axes.
pub fn gamma_indicator(bundle: &RayBundle) -> TensorResult<DiffTensor> {
    let spatial = bundle.n_u * bundle.n_b;
    let n_r = bundle.n_radiators();
    let mut values = Vec::with_capacity(bundle.n_rays() * n_r * 3 * spatial);
    for dir in &bundle.directions {
        for _ in 0..n_r {
            for component in dir {
                values.extend(std::iter::repeat(*component).take(spatial));
            }
        }
    }
    DiffTensor::constant(
        &[bundle.n_rays() * n_r, 3, bundle.n_u, bundle.n_b],
        values,
    )
}

/// Radial indicator of shape (N_a, N_r, 2 * N_c, N_u * N_b): the radial step
/// size of each depth sample, constant across rays, frequency, and the
/// spatial axes.
pub fn eta_indicator(bundle: &RayBundle, n_c: usize) -> TensorResult<DiffTensor> {
    let spatial = bundle.n_u * bundle.n_b;
    let n_r = bundle.n_radiators();
    let per_ray = n_r * 2 * n_c * spatial;
    let mut values = Vec::with_capacity(bundle.n_rays() * per_ray);
    for _ in 0..bundle.n_rays() {
        for interval in &bundle.intervals {
            values.extend(std::iter::repeat(*interval).take(2 * n_c * spatial));
        }
    }
    DiffTensor::constant(&[bundle.n_rays(), n_r, 2 * n_c, spatial], values)
}

#[cfg(test)]
mod tests {
    use num_complex::Complex64;

    use super::*;
    use crate::channel::CsiTensor;
    use crate::sampler::RayBundle;

    fn bundle() -> RayBundle {
        let rx = crate::channel::ArrayGeometry::new(
            1,
            2,
            0.1,
            [0.0, 0.0, 0.0],
            crate::channel::ArrayPlane::Xy,
        )
        .unwrap();
        RayBundle::build(&rx, 3, 4, 5, 2.0).unwrap()
    }

    fn uplink() -> CsiTensor {
        let mut values = Vec::new();
        for k in 0..2 {
            for u in 0..2 {
                for b in 0..3 {
                    values.push(Complex64::new(
                        (k * 100 + u * 10 + b) as f64,
                        -((k * 100 + u * 10 + b) as f64) - 0.5,
                    ));
                }
            }
        }
        CsiTensor::new(vec![2.4e9, 2.401e9], 2, 3, values).unwrap()
    }

    #[test]
    fn raw_queries_replicate_uplink_per_radiator() {
        let b = bundle();
        let q = build_raw_queries(&uplink(), &b).unwrap();
        assert_eq!(q.shape(), &[20, 4, 2, 3]);
        let vals = q.values();
        let per = 4 * 2 * 3;
        for copy in 1..20 {
            assert_eq!(&vals[copy * per..(copy + 1) * per], &vals[..per]);
        }
        // Real channels first, then imaginary, both in subcarrier order.
        assert_eq!(vals[0], 0.0);
        assert_eq!(vals[6], 100.0);
        assert_eq!(vals[2 * 6], -0.5);
        assert_eq!(vals[3 * 6 + 5], -112.5);
    }

    #[test]
    fn gamma_carries_ray_directions() {
        let b = bundle();
        let g = gamma_indicator(&b).unwrap();
        assert_eq!(g.shape(), &[20, 3, 2, 3]);
        let vals = g.values();
        let spatial = 6;
        for (i, dir) in b.directions.iter().enumerate() {
            for j in 0..b.n_radiators() {
                let base = (i * b.n_radiators() + j) * 3 * spatial;
                for (c, component) in dir.iter().enumerate() {
                    for s in 0..spatial {
                        assert_eq!(vals[base + c * spatial + s], *component);
                    }
                }
            }
        }
    }

    #[test]
    fn eta_carries_radial_intervals() {
        let b = bundle();
        let e = eta_indicator(&b, 2).unwrap();
        assert_eq!(e.shape(), &[4, 5, 4, 6]);
        let vals = e.values();
        let per_depth = 4 * 6;
        for ray in 0..4 {
            for (j, interval) in b.intervals.iter().enumerate() {
                let base = (ray * 5 + j) * per_depth;
                for s in 0..per_depth {
                    assert_eq!(vals[base + s], *interval);
                }
            }
        }
    }
}
