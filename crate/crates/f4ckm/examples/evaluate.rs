//! Evaluate downlink-CSI predictions: PSNR, beam-space cosine similarity,
//! and DFT-codebook spectral efficiency, against the copy-uplink baseline.
//!
//! The model here is only briefly trained, so its margins are modest; the
//! point is the evaluation flow. The baseline pretends the downlink equals
//! the measured uplink, which fails by the duplex frequency gap.

use f4ckm::channel::{generate_dataset, read_dataset, write_dataset, SceneSpec};
use f4ckm::metrics::{baseline_report, evaluate, EvalOptions};
use f4ckm::renderer::RendererContext;
use f4ckm::sampler::RayBundle;
use f4ckm::training::{checkpoint_config, split_index, train, TrainConfig, BEST_CHECKPOINT};
use f4ckm::wirare::Wirare;

fn main() {
    let mut spec = SceneSpec::desk_default();
    spec.n_samples = 12;
    let dataset = generate_dataset(&spec).expect("dataset");
    let dir = std::env::temp_dir().join("f4ckm_evaluate");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).expect("temp dir");
    write_dataset(&dir.join("desk12.f4ck"), &dataset).expect("write dataset");
    let dataset = read_dataset(&dir.join("desk12.f4ck")).expect("read dataset");

    let cfg = TrainConfig {
        lr: 1e-3,
        batch: 2,
        epochs: 3,
        seed: 9,
        rays: 8,
        radiators: 8,
        range_m: 7.0,
        n_h: 16,
        depth: 3,
        ..TrainConfig::default()
    };
    train(&dataset, &cfg, &dir).expect("training");

    let (model, blob) = Wirare::load(&dir.join(BEST_CHECKPOINT)).expect("checkpoint");
    let cfg = checkpoint_config(&blob).expect("embedded config");
    let bundle = RayBundle::build(
        &dataset.spec.rx_template(),
        dataset.spec.n_b(),
        cfg.rays,
        cfg.radiators,
        cfg.range_m,
    )
    .expect("bundle");
    let downlink = dataset.spec.grid.downlink_frequencies();
    let ctx = RendererContext::at_frequencies(&bundle, &downlink).expect("renderer");
    let leaves = model.leaves();

    let test = &dataset.samples[split_index(dataset.samples.len())..];
    let opts = EvalOptions::default();
    let report = evaluate(&model, &leaves, &ctx, &bundle, test, &downlink, &opts).expect("eval");
    let baseline = baseline_report(test, &downlink, &opts).expect("baseline");

    let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:+.3}"));
    println!("test samples: {}", test.len());
    println!(
        "model   : median PSNR {} dB, SGCS {}, SE {} b/s/Hz",
        show(report.median_psnr_db()),
        show(report.median_sgcs()),
        show(report.median_se())
    );
    println!(
        "baseline: median PSNR {} dB, SGCS {}, SE {} b/s/Hz",
        show(baseline.median_psnr_db()),
        show(baseline.median_sgcs()),
        show(baseline.median_se())
    );
}
