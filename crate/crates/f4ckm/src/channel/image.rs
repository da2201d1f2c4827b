//! Mirror-source enumeration for a rectangular (shoebox) room and the
//! seeded dataset generator built on it.
//!
//! Along one axis of length L a source at coordinate x has the image family
//! 2nL + x (an even 2|n| bounces, pure translation) and 2nL - x (an odd
//! |2n - 1| bounces, orientation flip). A 3-D image is one choice per axis
//! with the bounce counts summing to at most the configured order; its gain
//! is the wall reflection coefficient raised to that total count. Because
//! odd families flip orientation, transmit element offsets are negated on
//! every odd axis before measuring element-pair distances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    multipath_channel, ArrayGeometry, ArrayPlane, Band, ChannelError, CsiTensor, OfdmGrid, Path,
    PathSet, Result, SPEED_OF_LIGHT,
};

/// Mirror image of the tx array center: where it sits, which axes are
/// orientation-flipped, and how many wall bounces the path takes.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSource {
    pub position: [f64; 3],
    pub mirror: [bool; 3],
    pub reflections: u32,
}

impl ImageSource {
    /// Transmit element offset as seen through this image's mirrors.
    pub fn mirrored_offset(&self, off: [f64; 3]) -> [f64; 3] {
        let mut out = off;
        for a in 0..3 {
            if self.mirror[a] {
                out[a] = -out[a];
            }
        }
        out
    }
}

struct AxisImage {
    coord: f64,
    mirrored: bool,
    count: u32,
}

fn axis_images(x: f64, len: f64, max_order: u32) -> Vec<AxisImage> {
    let r = max_order as i64;
    let mut out = Vec::new();
    for n in -(r / 2)..=(r / 2) {
        out.push(AxisImage {
            coord: 2.0 * n as f64 * len + x,
            mirrored: false,
            count: (2 * n.unsigned_abs()) as u32,
        });
    }
    if r >= 1 {
        for n in (1 - r) / 2..=(r + 1) / 2 {
            let count = (2 * n - 1).unsigned_abs() as u32;
            if count <= max_order {
                out.push(AxisImage {
                    coord: 2.0 * n as f64 * len - x,
                    mirrored: true,
                    count,
                });
            }
        }
    }
    out
}

/// All image sources of `tx_center` in the room with at most `max_order`
/// total bounces, in a deterministic order: bounce count first, then
/// lexicographic position.
pub fn enumerate_images(room: [f64; 3], tx_center: [f64; 3], max_order: u32) -> Vec<ImageSource> {
    let xs = axis_images(tx_center[0], room[0], max_order);
    let ys = axis_images(tx_center[1], room[1], max_order);
    let zs = axis_images(tx_center[2], room[2], max_order);
    let mut out = Vec::new();
    for ix in &xs {
        for iy in &ys {
            let partial = ix.count + iy.count;
            if partial > max_order {
                continue;
            }
            for iz in &zs {
                let count = partial + iz.count;
                if count > max_order {
                    continue;
                }
                out.push(ImageSource {
                    position: [ix.coord, iy.coord, iz.coord],
                    mirror: [ix.mirrored, iy.mirrored, iz.mirrored],
                    reflections: count,
                });
            }
        }
    }
    out.sort_by(|a, b| {
        a.reflections
            .cmp(&b.reflections)
            .then(a.position[0].total_cmp(&b.position[0]))
            .then(a.position[1].total_cmp(&b.position[1]))
            .then(a.position[2].total_cmp(&b.position[2]))
    });
    out
}

/// Element-pair distances through one image, honoring its mirror parity.
/// Row-major (rx element, tx element).
pub fn image_pair_lengths(tx: &ArrayGeometry, rx: &ArrayGeometry, image: &ImageSource) -> Vec<f64> {
    let tx_off = tx.element_offsets();
    let rx_pos = rx.element_positions();
    let mut out = Vec::with_capacity(rx_pos.len() * tx_off.len());
    for r in &rx_pos {
        for o in &tx_off {
            let m = image.mirrored_offset(*o);
            let dx = r[0] - (image.position[0] + m[0]);
            let dy = r[1] - (image.position[1] + m[1]);
            let dz = r[2] - (image.position[2] + m[2]);
            out.push((dx * dx + dy * dy + dz * dz).sqrt());
        }
    }
    out
}

/// Build the PathSet between `tx` and `rx` from pre-enumerated images.
pub fn build_path_set(
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    images: &[ImageSource],
    wall_reflection: f64,
) -> PathSet {
    let paths = images
        .iter()
        .map(|img| {
            let v = [
                img.position[0] - rx.center[0],
                img.position[1] - rx.center[1],
                img.position[2] - rx.center[2],
            ];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            Path {
                reflections: img.reflections,
                gain: wall_reflection.powi(img.reflections as i32),
                lengths: image_pair_lengths(tx, rx, img),
                arrival: [v[0] / n, v[1] / n, v[2] / n],
            }
        })
        .collect();
    PathSet {
        n_u: rx.len(),
        n_b: tx.len(),
        paths,
    }
}

/// Everything that determines a synthetic dataset: the room, both arrays,
/// the band plan, and the seeded rx placement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub room: [f64; 3],
    pub wall_reflection: f64,
    pub max_order: u32,
    pub tx: ArrayGeometry,
    pub rx_rows: usize,
    pub rx_cols: usize,
    pub rx_spacing: f64,
    pub rx_plane: ArrayPlane,
    /// Rx centers are drawn uniformly from the room shrunk by this margin
    /// on every axis.
    pub rx_margin: f64,
    pub grid: OfdmGrid,
    pub n_samples: usize,
    pub seed: u64,
}

impl SceneSpec {
    /// Small indoor scene sized so training and evaluation run in minutes
    /// on one CPU core: 4x4 tx, 2x2 rx, 8 of 16 subcarriers over 20 MHz.
    pub fn desk_default() -> SceneSpec {
        let uplink_center = 2.415e9;
        let half_wave = SPEED_OF_LIGHT / uplink_center / 2.0;
        SceneSpec {
            room: [4.0, 5.0, 3.0],
            wall_reflection: 0.6,
            max_order: 1,
            tx: ArrayGeometry {
                rows: 4,
                cols: 4,
                spacing: half_wave,
                center: [0.5, 2.5, 2.0],
                plane: ArrayPlane::Yz,
            },
            rx_rows: 2,
            rx_cols: 2,
            rx_spacing: half_wave,
            rx_plane: ArrayPlane::Xy,
            rx_margin: 0.5,
            grid: OfdmGrid {
                n_fft: 16,
                n_used: 8,
                spacing_hz: 1.25e6,
                uplink_center_hz: uplink_center,
                duplex_gap_hz: 50e6,
            },
            n_samples: 512,
            seed: 7,
        }
    }

    pub fn n_u(&self) -> usize {
        self.rx_rows * self.rx_cols
    }

    pub fn n_b(&self) -> usize {
        self.tx.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ChannelError::BadScene(msg));
        if self.room.iter().any(|&d| d <= 0.0) {
            return bad(format!("room dimensions must be positive, got {:?}", self.room));
        }
        if !(self.wall_reflection > 0.0 && self.wall_reflection < 1.0) {
            return bad(format!(
                "wall reflection coefficient must lie in (0, 1), got {}",
                self.wall_reflection
            ));
        }
        for a in 0..3 {
            if !(self.tx.center[a] > 0.0 && self.tx.center[a] < self.room[a]) {
                return bad(format!(
                    "tx center {:?} is not strictly inside room {:?}",
                    self.tx.center, self.room
                ));
            }
        }
        if self.rx_rows == 0 || self.rx_cols == 0 || self.rx_spacing <= 0.0 {
            return bad(format!(
                "rx array must be non-empty with positive spacing, got {} x {} at {}",
                self.rx_rows, self.rx_cols, self.rx_spacing
            ));
        }
        if self.rx_margin <= 0.0 || self.room.iter().any(|&d| 2.0 * self.rx_margin >= d) {
            return bad(format!(
                "rx margin {} leaves no interior in room {:?}",
                self.rx_margin, self.room
            ));
        }
        if self.n_samples == 0 {
            return bad("n_samples must be at least 1".into());
        }
        // grid invariants re-checked so hand-built specs fail loudly
        OfdmGrid::new(
            self.grid.n_fft,
            self.grid.n_used,
            self.grid.spacing_hz,
            self.grid.uplink_center_hz,
            self.grid.duplex_gap_hz,
        )?;
        ArrayGeometry::new(
            self.tx.rows,
            self.tx.cols,
            self.tx.spacing,
            self.tx.center,
            self.tx.plane,
        )?;
        Ok(())
    }

    /// Receiver array with the spec's layout, centered at the origin.
    /// Ray bundles are receiver-centric, so the template is position-free.
    pub fn rx_template(&self) -> ArrayGeometry {
        ArrayGeometry {
            rows: self.rx_rows,
            cols: self.rx_cols,
            spacing: self.rx_spacing,
            center: [0.0; 3],
            plane: self.rx_plane,
        }
    }

    /// Rx center for sample `index`, drawn from that sample's own stream.
    pub fn rx_position(&self, index: u64) -> [f64; 3] {
        let mut rng = substream(self.seed, index);
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = rng.gen_range(self.rx_margin..self.room[a] - self.rx_margin);
        }
        p
    }
}

/// Per-sample RNG keyed on (seed, index) so any generation order, serial or
/// not, yields bit-identical draws.
fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// One dataset entry: matched uplink and downlink CSI at a known rx spot.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub uplink: CsiTensor,
    pub downlink: CsiTensor,
    pub rx_position: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: SceneSpec,
    pub samples: Vec<Sample>,
}

/// Exact CSI pair for a receiver placed at `rx_position`, using the image
/// set returned by `enumerate_images(spec.room, spec.tx.center, ..)`.
pub fn sample_at(spec: &SceneSpec, images: &[ImageSource], rx_position: [f64; 3]) -> Result<Sample> {
    let rx = spec.rx_template().at(rx_position);
    let paths = build_path_set(&spec.tx, &rx, images, spec.wall_reflection);
    let uplink = multipath_channel(&paths, &spec.grid, Band::Uplink)?;
    let downlink = multipath_channel(&paths, &spec.grid, Band::Downlink)?;
    Ok(Sample {
        uplink,
        downlink,
        rx_position,
    })
}

/// Synthesize the full dataset a SceneSpec describes. Deterministic given
/// the spec's seed.
pub fn generate_dataset(spec: &SceneSpec) -> Result<Dataset> {
    spec.validate()?;
    let images = enumerate_images(spec.room, spec.tx.center, spec.max_order);
    let mut samples = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        samples.push(sample_at(spec, &images, spec.rx_position(i as u64))?);
    }
    Ok(Dataset {
        spec: spec.clone(),
        samples,
    })
}
