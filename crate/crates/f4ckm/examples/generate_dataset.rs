//! Synthesize a channel dataset for a shoebox room and round-trip it
//! through the on-disk container.
//!
//! The image method mirrors the transmit array across the walls, so every
//! sample's uplink and downlink CSI are exact sums of free-space terms. Run
//! with `cargo run --example generate_dataset`.

use f4ckm::channel::{generate_dataset, read_dataset, write_dataset, SceneSpec};

fn main() {
    let mut spec = SceneSpec::desk_default();
    spec.n_samples = 16;
    let dataset = generate_dataset(&spec).expect("generation");

    println!(
        "scene: {} x {} x {} m room, wall reflection {}, image order {}",
        spec.room[0], spec.room[1], spec.room[2], spec.wall_reflection, spec.max_order
    );
    println!(
        "grids: {} used subcarriers, uplink {:.4} GHz, downlink {:.4} GHz",
        spec.grid.n_used,
        spec.grid.uplink_center_hz / 1e9,
        spec.grid.downlink_center_hz() / 1e9
    );
    for (i, s) in dataset.samples.iter().take(4).enumerate() {
        let mean_up: f64 = s.uplink.values.iter().map(|c| c.norm()).sum::<f64>()
            / s.uplink.values.len() as f64;
        let mean_down: f64 = s.downlink.values.iter().map(|c| c.norm()).sum::<f64>()
            / s.downlink.values.len() as f64;
        println!(
            "sample {i}: rx at [{:.2}, {:.2}, {:.2}] m, mean |H| uplink {:.3e}, downlink {:.3e}",
            s.rx_position[0], s.rx_position[1], s.rx_position[2], mean_up, mean_down
        );
    }

    let dir = std::env::temp_dir().join("f4ckm_generate_dataset");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("desk16.f4ck");
    write_dataset(&path, &dataset).expect("write");
    let back = read_dataset(&path).expect("read");
    assert_eq!(back.spec, dataset.spec);
    println!(
        "container round trip: {} samples, {} bytes at {}",
        back.samples.len(),
        std::fs::metadata(&path).expect("metadata").len(),
        path.display()
    );
}
