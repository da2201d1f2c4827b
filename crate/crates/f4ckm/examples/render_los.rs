//! Render a line-of-sight channel from an analytically constructed radiator
//! field and compare it against the exact free-space answer.
//!
//! One radiator sits at the transmitter's depth along ray 0 with sigma =
//! ln 2, so its absorption is exactly 1/2; loading its coefficients with
//! 2 H / FS makes the renderer's own free-space factor cancel and the
//! aggregate reproduce the true channel to round-off.

use f4ckm::channel::{
    free_space_factor, multipath_channel, per_antenna_path_lengths, ArrayGeometry, ArrayPlane,
    Band, OfdmGrid, Path, PathSet,
};
use f4ckm::renderer::aggregate;
use f4ckm::sampler::RayBundle;
use f4ckm::tensor::{ComplexPair, DiffTensor};
use num_complex::Complex64;

fn main() {
    let rx = ArrayGeometry::new(2, 2, 0.062, [0.0; 3], ArrayPlane::Xy).expect("rx array");
    let grid = OfdmGrid::new(16, 4, 1.25e6, 2.415e9, 50e6).expect("grid");
    let bundle = RayBundle::build(&rx, 4, 4, 8, 6.0).expect("bundle");

    // place the tx array center on ray 0 at the fourth radiator's depth
    let w = bundle.directions[0];
    let depth_idx = 3;
    let depth = bundle.cumulative_depths[depth_idx];
    let tx_center = [w[0] * depth, w[1] * depth, w[2] * depth];
    let tx = ArrayGeometry::new(2, 2, 0.062, tx_center, ArrayPlane::Yz).expect("tx array");
    let paths = PathSet {
        n_u: 4,
        n_b: 4,
        paths: vec![Path {
            reflections: 0,
            gain: 1.0,
            lengths: per_antenna_path_lengths(&tx, &rx, tx_center),
            arrival: w,
        }],
    };
    let truth = multipath_channel(&paths, &grid, Band::Downlink).expect("analytic channel");

    let (n_c, n_u, n_b) = (4, 4, 4);
    let total = bundle.n_rays() * bundle.n_radiators();
    let shape = [total, n_c, n_u, n_b];
    let mut sigma = vec![0.0; total * n_c * n_u * n_b];
    let mut coeffs = vec![Complex64::new(0.0, 0.0); sigma.len()];
    let freqs = grid.downlink_frequencies();
    for k in 0..n_c {
        for ub in 0..n_u * n_b {
            let idx = (depth_idx * n_c + k) * n_u * n_b + ub;
            sigma[idx] = std::f64::consts::LN_2;
            let dist = bundle.calibration[0][ub] + depth;
            let fs = free_space_factor(freqs[k], dist).expect("free space").phasor();
            coeffs[idx] = 2.0 * truth.values[k * n_u * n_b + ub] / fs;
        }
    }
    let field = f4ckm::renderer::RadiatorField::new(
        DiffTensor::constant(&shape, sigma).expect("sigma tensor"),
        ComplexPair::constant(&shape, &coeffs).expect("coefficient tensor"),
    )
    .expect("field");

    let rendered = aggregate(&field, &bundle, &grid).expect("render").to_complex();
    let mut num = 0.0;
    let mut den = 0.0;
    for (got, want) in rendered.iter().zip(&truth.values) {
        num += (got - want).norm_sqr();
        den += want.norm_sqr();
    }
    println!("tx center along ray 0 at {depth:.3} m");
    for k in 0..n_c {
        let idx = k * n_u * n_b;
        println!(
            "subcarrier {k}: rendered {:.6e}{:+.6e}i, analytic {:.6e}{:+.6e}i",
            rendered[idx].re, rendered[idx].im, truth.values[idx].re, truth.values[idx].im
        );
    }
    let rel = (num / den).sqrt();
    println!("relative error over all entries: {rel:.3e}");
    assert!(rel < 1e-6);
}
