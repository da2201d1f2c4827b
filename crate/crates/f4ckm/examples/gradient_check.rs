//! Finite-difference check of the full differentiable pipeline: field
//! network forward, volume rendering, and the NMSE loss.
//!
//! Central differences probe a few elements of every parameter tensor; the
//! backpropagated gradient must match each probe to a small relative error.

use f4ckm::channel::{ArrayGeometry, ArrayPlane, CsiTensor};
use f4ckm::renderer::RendererContext;
use f4ckm::sampler::RayBundle;
use f4ckm::tensor::{grad_check, TensorError};
use f4ckm::training::nmse_sample;
use f4ckm::wirare::{InitMode, Wirare, WirareConfig};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let freqs_hz = [2.4625e9, 2.46375e9];
    let config = WirareConfig {
        n_c: 2,
        n_radiators: 3,
        n_h: 16,
        depth: 3,
        shaping_width: 8,
        ac_mid: 12,
        fca_hidden: 16,
        fca_enabled: true,
        freqs_ghz: freqs_hz.iter().map(|f| f / 1e9).collect(),
        init: InitMode::Random,
        seed: 5,
    };
    let model = Wirare::new(config).expect("model");
    let leaves = model.leaves();
    let rx = ArrayGeometry::new(1, 2, 0.062, [0.0; 3], ArrayPlane::Xy).expect("rx");
    let bundle = RayBundle::build(&rx, 2, 2, 3, 4.0).expect("bundle");
    let ctx = RendererContext::at_frequencies(&bundle, &freqs_hz).expect("renderer");

    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut draw = |n: usize| -> Vec<Complex64> {
        (0..n)
            .map(|_| Complex64::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0))
            .collect()
    };
    let uplink = CsiTensor::new(freqs_hz.to_vec(), 2, 2, draw(8)).expect("uplink");
    let target = CsiTensor::new(freqs_hz.to_vec(), 2, 2, draw(8)).expect("target");

    let report = grad_check(
        |inputs| {
            let wrap = |msg: String| TensorError::Invalid {
                op: "forward_nmse",
                msg,
            };
            let field = model
                .forward(inputs, &uplink, &bundle)
                .map_err(|e| wrap(e.to_string()))?;
            let pred = ctx.aggregate(&field).map_err(|e| wrap(e.to_string()))?;
            nmse_sample(&pred, &target).map_err(|e| wrap(e.to_string()))
        },
        &leaves,
        1e-5,
        2,
        99,
    )
    .expect("gradient check");

    for (leaf, entry) in report.leaves.iter().zip(model.entries()) {
        println!(
            "{:<24} probes {}  max rel err {:.3e}",
            entry.name, leaf.elements_checked, leaf.max_rel_err
        );
    }
    println!("worst relative error: {:.3e}", report.max_rel_err);
    assert!(report.passes(1e-3), "gradient check failed");
    println!("PASS (tolerance 1e-3)");
}
