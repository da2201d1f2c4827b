//! Compare spherical-Fibonacci-grid ray directions against a
//! latitude-longitude grid of the same size.
//!
//! The quality measure is the coefficient of variation of nearest-neighbor
//! angles: uniform coverage means every direction has similar spacing to
//! its closest peer. The lat-long grid crowds directions near the poles, so
//! its CV is much worse at equal counts.

use f4ckm::sampler::{ll_directions, nn_angle_cv, sfg_directions};

fn main() {
    let ll = ll_directions(10.0).expect("lat-long grid");
    let k = ll.len();
    let sfg = sfg_directions(k).expect("fibonacci grid");
    println!("directions per scheme: {k}");

    let (cv_sfg, cv_ll) = (nn_angle_cv(&sfg), nn_angle_cv(&ll));
    println!("nearest-neighbor angle CV, fibonacci: {cv_sfg:.4}");
    println!("nearest-neighbor angle CV, lat-long : {cv_ll:.4}");
    assert!(cv_sfg < cv_ll, "fibonacci coverage should be more uniform");

    // the advantage is not an artifact of one particular count
    for k in [64, 256, 1024] {
        let sfg = sfg_directions(k).expect("fibonacci grid");
        println!("K = {k:4}: fibonacci CV {:.4}", nn_angle_cv(&sfg));
    }
}
