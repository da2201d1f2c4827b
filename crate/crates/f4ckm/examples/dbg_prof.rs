//! Scratch profiling probe. Not part of the shipped examples.

use std::time::Instant;

use f4ckm::channel::{generate_dataset, SceneSpec};
use f4ckm::renderer::RendererContext;
use f4ckm::sampler::RayBundle;
use f4ckm::training::nmse_sample;
use f4ckm::wirare::{InitMode, Wirare, WirareConfig};

fn main() {
    let mut spec = SceneSpec::desk_default();
    spec.n_samples = 2;
    let dataset = generate_dataset(&spec).expect("dataset");
    let sample = &dataset.samples[0];

    let cfg = WirareConfig {
        n_c: spec.grid.n_used,
        n_radiators: 16,
        n_h: std::env::var("P_NH").ok().and_then(|v| v.parse().ok()).unwrap_or(16),
        depth: std::env::var("P_DEPTH").ok().and_then(|v| v.parse().ok()).unwrap_or(3),
        shaping_width: std::env::var("P_SW").ok().and_then(|v| v.parse().ok()).unwrap_or(64),
        ac_mid: 8,
        fca_hidden: 16 + 128,
        fca_enabled: std::env::var("P_FCA").map(|v| v != "0").unwrap_or(true),
        freqs_ghz: spec
            .grid
            .downlink_frequencies()
            .iter()
            .map(|f| f / 1e9)
            .collect(),
        init: InitMode::NearIdentity,
        seed: 3,
    };
    let model = Wirare::new(cfg).expect("model");
    let bundle = RayBundle::build(&spec.rx_template(), spec.n_b(), 16, 16, 9.0).expect("bundle");
    let downlink = spec.grid.downlink_frequencies();
    let ctx = RendererContext::at_frequencies(&bundle, &downlink).expect("renderer");

    let reps = 5;
    let leaves = model.leaves();

    let t = Instant::now();
    for _ in 0..reps {
        let q = model.shape_queries(&leaves, &sample.uplink, &bundle).expect("shape");
        std::hint::black_box(&q);
    }
    println!("shape_queries  {:>8.1} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let queries = model.shape_queries(&leaves, &sample.uplink, &bundle).expect("shape");
    let t = Instant::now();
    for _ in 0..reps {
        let mp = model.mp_forward(&leaves, &queries).expect("mp");
        std::hint::black_box(&mp);
    }
    println!("mp_forward     {:>8.1} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        let field = model.forward(&leaves, &sample.uplink, &bundle).expect("fwd");
        std::hint::black_box(&field);
    }
    println!("forward        {:>8.1} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let field = model.forward(&leaves, &sample.uplink, &bundle).expect("fwd");
    let t = Instant::now();
    for _ in 0..reps {
        let pred = ctx.aggregate(&field).expect("agg");
        std::hint::black_box(&pred);
    }
    println!("aggregate      {:>8.1} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        let leaves = model.leaves();
        let field = model.forward(&leaves, &sample.uplink, &bundle).expect("fwd");
        let pred = ctx.aggregate(&field).expect("agg");
        let loss = nmse_sample(&pred, &sample.downlink).expect("loss");
        std::hint::black_box(loss.values()[0]);
    }
    println!("fwd+agg+loss   {:>8.1} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        let leaves = model.leaves();
        let field = model.forward(&leaves, &sample.uplink, &bundle).expect("fwd");
        let pred = ctx.aggregate(&field).expect("agg");
        let loss = nmse_sample(&pred, &sample.downlink).expect("loss");
        loss.backward().expect("bwd");
        std::hint::black_box(leaves[0].grad());
    }
    println!("full step      {:>8.1} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);
}
