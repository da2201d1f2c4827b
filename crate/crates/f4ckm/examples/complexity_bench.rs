//! Analytic complexity of the field network: parameter counts for the full
//! and lite presets, and how forward FLOPs scale with array size.

use f4ckm::metrics::flop_count;
use f4ckm::wirare::{Wirare, WirareConfig};

fn band(n_c: usize) -> Vec<f64> {
    (0..n_c)
        .map(|k| 3.5 + (k as f64 - (n_c as f64 - 1.0) / 2.0) * 1.2e-4)
        .collect()
}

fn main() {
    // published-scale dimensions: 26 subcarriers, 32 radial samples
    let full = Wirare::new(WirareConfig::full(band(26), 32, 0)).expect("full preset");
    let lite = Wirare::new(WirareConfig::lite(band(26), 32, 0)).expect("lite preset");
    println!("full preset: {:>9} parameters", full.param_count());
    println!("lite preset: {:>9} parameters", lite.param_count());

    let (rays, n_u, n_b) = (648, 4, 32);
    let f_full = flop_count(&full, rays, n_u, n_b);
    let f_lite = flop_count(&lite, rays, n_u, n_b);
    println!("forward FLOPs at {rays} rays, {n_u} x {n_b} antennas:");
    println!("  full {f_full:>14}");
    println!(
        "  lite {f_lite:>14}  ({:.1}% reduction)",
        100.0 * (1.0 - f_lite as f64 / f_full as f64)
    );

    // doubling the BS array should roughly double the work
    let doubled = flop_count(&full, rays, n_u, 2 * n_b);
    println!(
        "doubling N_b: {doubled} FLOPs, ratio {:.3}",
        doubled as f64 / f_full as f64
    );
}
