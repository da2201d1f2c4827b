//! Scratch tuning harness. Not part of the shipped examples.

use std::time::Instant;

use f4ckm::channel::{generate_dataset, SceneSpec};
use f4ckm::metrics::{baseline_report, evaluate, EvalOptions};
use f4ckm::renderer::RendererContext;
use f4ckm::sampler::RayBundle;
use f4ckm::training::{split_index, train, TrainConfig, BEST_CHECKPOINT};
use f4ckm::wirare::{InitMode, Wirare};

fn env_f64(key: &str, default: f64) -> f64 {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn env_usize(key: &str, default: usize) -> usize {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let mut spec = SceneSpec::desk_default();
    spec.n_samples = env_usize("C4_NS", 512);
    let t0 = Instant::now();
    let dataset = generate_dataset(&spec).expect("dataset");
    println!("dataset: {} samples in {:.1} s", dataset.samples.len(), t0.elapsed().as_secs_f64());

    let cfg = TrainConfig {
        lr: env_f64("C4_LR", 1e-3),
        batch: env_usize("C4_BATCH", 8),
        epochs: env_usize("C4_EPOCHS", 50),
        seed: env_usize("C4_SEED", 3) as u64,
        rays: env_usize("C4_RAYS", 16),
        radiators: env_usize("C4_RAD", 16),
        range_m: env_f64("C4_RANGE", 9.0),
        shaping_width: env_usize("C4_SW", 64),
        n_h: env_usize("C4_NH", 32),
        depth: env_usize("C4_DEPTH", 4),
        init: match std::env::var("C4_INIT").as_deref() {
            Ok("random") => InitMode::Random,
            _ => InitMode::NearIdentity,
        },
        ..TrainConfig::default()
    };
    println!(
        "cfg: lr {} batch {} epochs {} seed {} rays {} rad {} range {} n_h {} depth {}",
        cfg.lr, cfg.batch, cfg.epochs, cfg.seed, cfg.rays, cfg.radiators, cfg.range_m, cfg.n_h, cfg.depth
    );

    let dir = std::path::PathBuf::from(
        std::env::var("C4_OUT").unwrap_or_else(|_| "/tmp/f4ckm_c4".into()),
    );
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).expect("out dir");

    let t1 = Instant::now();
    let records = train(&dataset, &cfg, &dir).expect("training");
    let train_s = t1.elapsed().as_secs_f64();
    for r in records.iter().step_by(5.max(records.len() / 10)) {
        println!(
            "epoch {:>3}: train {:.5} val {:.5} psnr {:+.2} lr {:.2e} wall {:.1}s",
            r.epoch, r.train_nmse, r.val_nmse, r.val_psnr_db, r.lr, r.wall_s
        );
    }
    let last = records.last().expect("records");
    println!(
        "last epoch {}: train {:.5} val {:.5} psnr {:+.2}; total {:.1} s ({:.1} s/epoch)",
        last.epoch, last.train_nmse, last.val_nmse, last.val_psnr_db, train_s,
        train_s / records.len() as f64
    );

    let (model, _) = Wirare::load(&dir.join(BEST_CHECKPOINT)).expect("checkpoint");
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

    let g = |v: Option<f64>| v.unwrap_or(f64::NAN);
    let psnr_gain = g(report.median_psnr_db()) - g(baseline.median_psnr_db());
    println!(
        "test: model PSNR {:+.3} dB SGCS {:.4} | baseline PSNR {:+.3} dB SGCS {:.4}",
        g(report.median_psnr_db()),
        g(report.median_sgcs()),
        g(baseline.median_psnr_db()),
        g(baseline.median_sgcs())
    );
    println!(
        "gates: psnr gain {:+.2} dB (need >= 3) {} | sgcs {:.4} (need >= 0.9) {}",
        psnr_gain,
        if psnr_gain >= 3.0 { "PASS" } else { "FAIL" },
        g(report.median_sgcs()),
        if g(report.median_sgcs()) >= 0.9 { "PASS" } else { "FAIL" }
    );
}
