//! Emit ground-truth and predicted channel-gain maps over a room grid.
//!
//! Each cell holds the mean squared downlink magnitude (in dB) for a
//! receiver parked at that spot. The predicted map feeds the true uplink at
//! each spot through a briefly trained field network, so it is blurry; the
//! pipeline and file formats are the point here.

use f4ckm::channel::{
    enumerate_images, generate_dataset, sample_at, ArrayGeometry, ArrayPlane, CsiTensor, OfdmGrid,
    SceneSpec,
};
use f4ckm::metrics::{predict_downlink, write_grid_csv, write_pgm16};
use f4ckm::renderer::RendererContext;
use f4ckm::sampler::RayBundle;
use f4ckm::training::{train, TrainConfig, BEST_CHECKPOINT};
use f4ckm::wirare::Wirare;

fn mean_gain_db(t: &CsiTensor) -> f64 {
    let e: f64 = t.values.iter().map(|c| c.norm_sqr()).sum::<f64>() / t.values.len() as f64;
    10.0 * e.max(1e-30).log10()
}

fn main() {
    let spec = SceneSpec {
        room: [3.0, 3.0, 2.5],
        wall_reflection: 0.5,
        max_order: 1,
        tx: ArrayGeometry::new(2, 2, 0.062, [0.3, 1.5, 1.2], ArrayPlane::Yz).expect("tx"),
        rx_rows: 1,
        rx_cols: 2,
        rx_spacing: 0.062,
        rx_plane: ArrayPlane::Xy,
        rx_margin: 0.3,
        grid: OfdmGrid::new(8, 2, 1.25e6, 2.415e9, 50e6).expect("grid"),
        n_samples: 8,
        seed: 3,
    };
    let dataset = generate_dataset(&spec).expect("dataset");
    let out = std::env::temp_dir().join("f4ckm_heatmap");
    let _ = std::fs::remove_dir_all(&out);
    let cfg = TrainConfig {
        lr: 1e-3,
        batch: 2,
        epochs: 5,
        seed: 1,
        rays: 8,
        radiators: 8,
        range_m: 5.0,
        n_h: 16,
        depth: 3,
        ..TrainConfig::default()
    };
    train(&dataset, &cfg, &out).expect("training");
    let (model, _) = Wirare::load(&out.join(BEST_CHECKPOINT)).expect("checkpoint");
    let leaves = model.leaves();
    let bundle = RayBundle::build(&spec.rx_template(), spec.n_b(), cfg.rays, cfg.radiators, cfg.range_m)
        .expect("bundle");
    let downlink = spec.grid.downlink_frequencies();
    let ctx = RendererContext::at_frequencies(&bundle, &downlink).expect("renderer");

    let (spacing, height) = (0.25, 1.2);
    let nx = (spec.room[0] / spacing) as usize;
    let ny = (spec.room[1] / spacing) as usize;
    let images = enumerate_images(spec.room, spec.tx.center, spec.max_order);
    let mut truth = Vec::with_capacity(nx * ny);
    let mut predicted = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let pos = [(i as f64 + 0.5) * spacing, (j as f64 + 0.5) * spacing, height];
            let s = sample_at(&spec, &images, pos).expect("channel at grid point");
            truth.push(mean_gain_db(&s.downlink));
            let pred = predict_downlink(&model, &leaves, &ctx, &bundle, &s.uplink, &downlink)
                .expect("prediction");
            predicted.push(mean_gain_db(&pred));
        }
    }

    for (name, grid) in [("truth", &truth), ("predicted", &predicted)] {
        write_grid_csv(&out.join(format!("{name}.csv")), nx, ny, grid).expect("csv");
        write_pgm16(&out.join(format!("{name}.pgm")), nx, ny, grid).expect("pgm");
    }
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let (tl, th) = span(&truth);
    let (pl, ph) = span(&predicted);
    println!("grid {nx} x {ny} at {spacing} m spacing, height {height} m");
    println!("truth gain range    : {tl:.1} dB to {th:.1} dB");
    println!("predicted gain range: {pl:.1} dB to {ph:.1} dB");
    println!("maps written to {}", out.display());
}
