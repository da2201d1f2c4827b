//! Field network: maps uplink CSI queries to a radiator field.
//!
//! Raw queries are replicated uplink measurements shaped by two residual
//! filter stages conditioned on the sampling geometry (ray directions, radial
//! steps). A convolutional trunk with frequency-conditioned affine modulation
//! then emits, per angular and radial sample, an attenuation sigma and a
//! complex radiance coefficient per downlink subcarrier. Rendering those
//! through [`crate::renderer`] yields the downlink CSI prediction.
//!
//! Two presets are provided: `full` (128 hidden channels, depth 6) and `lite`
//! (32 hidden channels, depth 4) trading accuracy against compute.

mod checkpoint;
mod layers;
mod queries;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use layers::{
    block_fwd, conv_fwd, fc_fwd, fca_fwd, gn_fwd, groups_for, split_complex, FcaModule, InitMode,
    ParamEntry, GN_EPS,
};
pub use queries::{build_raw_queries, eta_indicator, gamma_indicator};

use crate::channel::CsiTensor;
use crate::renderer::{RadiatorField, RendererError};
use crate::sampler::RayBundle;
use crate::tensor::{ComplexPair, DiffTensor, TensorError};
use layers::{BlockP, ConvP, FcaP, GnP, Registry};

#[derive(Debug, Error)]
pub enum WirareError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Renderer(#[from] RendererError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
}

type Result<T> = std::result::Result<T, WirareError>;

/// Architecture and conditioning parameters of the field network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WirareConfig {
    /// Downlink subcarriers predicted per query.
    pub n_c: usize,
    /// Radial samples per ray; must match the ray bundle.
    pub n_radiators: usize,
    /// Hidden channel width of the trunk.
    pub n_h: usize,
    /// Convolutional depth: stem + residual blocks + head.
    pub depth: usize,
    /// Channel width of the query-shaping convolutions.
    pub shaping_width: usize,
    /// Bottleneck width of the coefficient branch.
    pub ac_mid: usize,
    /// Hidden width of the frequency-conditioned modulation stages.
    pub fca_hidden: usize,
    /// Disable to bypass frequency modulation entirely.
    pub fca_enabled: bool,
    /// Downlink subcarrier frequencies in GHz, length `n_c`.
    pub freqs_ghz: Vec<f64>,
    pub init: InitMode,
    pub seed: u64,
}

impl WirareConfig {
    /// Full-size preset: 128 hidden channels, depth 6.
    pub fn full(freqs_ghz: Vec<f64>, n_radiators: usize, seed: u64) -> Self {
        Self::preset(freqs_ghz, n_radiators, 128, 6, seed)
    }

    /// Lite preset: 32 hidden channels, depth 4.
    pub fn lite(freqs_ghz: Vec<f64>, n_radiators: usize, seed: u64) -> Self {
        Self::preset(freqs_ghz, n_radiators, 32, 4, seed)
    }

    /// Shared preset rule: shaping width 64, coefficient bottleneck at half
    /// the trunk width, modulation hidden width 128 above the trunk width.
    pub fn preset(
        freqs_ghz: Vec<f64>,
        n_radiators: usize,
        n_h: usize,
        depth: usize,
        seed: u64,
    ) -> Self {
        WirareConfig {
            n_c: freqs_ghz.len(),
            n_radiators,
            n_h,
            depth,
            shaping_width: 64,
            ac_mid: (n_h / 2).max(4),
            fca_hidden: n_h + 128,
            fca_enabled: true,
            freqs_ghz,
            init: InitMode::NearIdentity,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_c == 0 || self.freqs_ghz.len() != self.n_c {
            return Err(WirareError::Config(format!(
                "need n_c ({}) positive frequencies, got {}",
                self.n_c,
                self.freqs_ghz.len()
            )));
        }
        if self.freqs_ghz.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(WirareError::Config(
                "subcarrier frequencies must be positive and finite".into(),
            ));
        }
        if self.depth < 3 {
            return Err(WirareError::Config(format!(
                "depth {} leaves no residual blocks",
                self.depth
            )));
        }
        for (what, v) in [
            ("n_radiators", self.n_radiators),
            ("n_h", self.n_h),
            ("shaping_width", self.shaping_width),
            ("ac_mid", self.ac_mid),
            ("fca_hidden", self.fca_hidden),
        ] {
            if v == 0 {
                return Err(WirareError::Config(format!("{what} must be positive")));
            }
        }
        Ok(())
    }

    fn blocks(&self) -> usize {
        self.depth - 2
    }
}

struct Arch {
    ang1: ConvP,
    ang2: ConvP,
    rad1: ConvP,
    rad2: ConvP,
    stem: ConvP,
    stem_gn: GnP,
    trunk: Vec<(BlockP, FcaP)>,
    sigma_head: ConvP,
    ac_down: BlockP,
    ac_down_fca: FcaP,
    ac_up: BlockP,
    ac_up_fca: FcaP,
    ac_head: ConvP,
}

/// Softplus argument of the initial sigma head bias; keeps early absorption
/// small so fresh networks start nearly transparent.
const SIGMA_BIAS_INIT: f64 = -2.0;

/// Minimum absorption density added after the softplus.
const SIGMA_FLOOR: f64 = 1e-3;

/// The field network: named parameter store plus wiring.
pub struct Wirare {
    pub config: WirareConfig,
    reg: Registry,
    arch: Arch,
}

impl Wirare {
    pub fn new(config: WirareConfig) -> Result<Self> {
        config.validate()?;
        let mut reg = Registry::new(config.seed, config.init);
        let (n_c, n_h, s) = (config.n_c, config.n_h, config.shaping_width);

        let ang1 = reg.conv("shaping.angular.conv1", 2 * n_c + 3, s, 3);
        let ang2 = reg.conv_closing("shaping.angular.conv2", s, 2 * n_c, 3);
        let rad1 = reg.conv("shaping.radial.conv1", 2 * config.n_radiators, s, 3);
        let rad2 = reg.conv_closing("shaping.radial.conv2", s, config.n_radiators, 3);

        let stem = reg.conv("mp.stem", 2 * n_c, n_h, 3);
        let stem_gn = reg.gn("mp.stem_gn", n_h);
        let mut trunk = Vec::with_capacity(config.blocks());
        for i in 0..config.blocks() {
            let block = reg.block(&format!("mp.block{i}"), n_h, n_h);
            let fca = reg.fca(&format!("mp.fca{i}"), n_h, n_c, config.fca_hidden);
            trunk.push((block, fca));
        }
        let sigma_head = reg.conv("mp.sigma_head", n_h, n_c, 3);
        reg.entries[sigma_head.bias].values = Arc::new(vec![SIGMA_BIAS_INIT; n_c]);

        let ac_down = reg.block("ac.down", n_h + 3, config.ac_mid);
        let ac_down_fca = reg.fca("ac.down_fca", config.ac_mid, n_c, config.fca_hidden);
        let ac_up = reg.block("ac.up", config.ac_mid, n_h);
        let ac_up_fca = reg.fca("ac.up_fca", n_h, n_c, config.fca_hidden);
        let ac_head = reg.conv("ac.head", n_h, 2 * n_c, 3);

        Ok(Wirare {
            config,
            reg,
            arch: Arch {
                ang1,
                ang2,
                rad1,
                rad2,
                stem,
                stem_gn,
                trunk,
                sigma_head,
                ac_down,
                ac_down_fca,
                ac_up,
                ac_up_fca,
                ac_head,
            },
        })
    }

    /// Fresh leaf tensors over the current parameter values, in stable
    /// registry order. Build one set per optimization step so gradients
    /// accumulate across a batch.
    pub fn leaves(&self) -> Vec<DiffTensor> {
        self.reg.leaves()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.reg.entries
    }

    /// Replace one parameter's value buffer. Leaves built earlier keep the
    /// old buffer; rebuild leaves to pick up the change.
    pub fn set_values(&mut self, idx: usize, values: Vec<f64>) -> Result<()> {
        let entry = &mut self.reg.entries[idx];
        if values.len() != entry.numel() {
            return Err(WirareError::Shape(format!(
                "parameter {} wants {} values, got {}",
                entry.name,
                entry.numel(),
                values.len()
            )));
        }
        entry.values = Arc::new(values);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.reg.param_count()
    }

    /// Angular shaping: queries and the ray-direction indicator are merged
    /// through two convolutions and added back to the queries.
    pub fn shape_angular(
        &self,
        leaves: &[DiffTensor],
        q_raw: &DiffTensor,
        gamma: &DiffTensor,
    ) -> Result<DiffTensor> {
        let cat = DiffTensor::concat(&[q_raw.clone(), gamma.clone()], 1)?;
        let h = conv_fwd(&cat, leaves, &self.arch.ang1)?.gelu();
        let h = conv_fwd(&h, leaves, &self.arch.ang2)?;
        Ok(h.add(q_raw)?)
    }

    /// Radial shaping: queries regrouped with the radial axis as channels,
    /// merged with the step-size indicator, filtered, and added back.
    pub fn shape_radial(
        &self,
        leaves: &[DiffTensor],
        q_ang: &DiffTensor,
        eta: &DiffTensor,
    ) -> Result<DiffTensor> {
        let [rows, two_nc, n_u, n_b] = *q_ang.shape() else {
            return Err(WirareError::Shape(format!(
                "queries must be rank 4, got {:?}",
                q_ang.shape()
            )));
        };
        let [n_a, n_r, eta_nc, spatial] = *eta.shape() else {
            return Err(WirareError::Shape(format!(
                "eta must be rank 4, got {:?}",
                eta.shape()
            )));
        };
        if n_a * n_r != rows || eta_nc != two_nc || spatial != n_u * n_b {
            return Err(WirareError::Shape(format!(
                "eta {:?} does not match queries {:?}",
                eta.shape(),
                q_ang.shape()
            )));
        }
        if n_r != self.config.n_radiators {
            return Err(WirareError::Shape(format!(
                "eta has {n_r} radial samples, model wants {}",
                self.config.n_radiators
            )));
        }
        let grouped = q_ang.reshape(&[n_a, n_r, two_nc, spatial])?;
        let cat = DiffTensor::concat(&[grouped.clone(), eta.clone()], 1)?;
        let h = conv_fwd(&cat, leaves, &self.arch.rad1)?.gelu();
        let h = conv_fwd(&h, leaves, &self.arch.rad2)?;
        Ok(h.add(&grouped)?.reshape(&[rows, two_nc, n_u, n_b])?)
    }

    /// Full query pipeline: raw replication, then angular and radial shaping.
    pub fn shape_queries(
        &self,
        leaves: &[DiffTensor],
        uplink: &CsiTensor,
        bundle: &RayBundle,
    ) -> Result<DiffTensor> {
        let q_raw = build_raw_queries(uplink, bundle)?;
        let gamma = gamma_indicator(bundle)?;
        let eta = eta_indicator(bundle, uplink.n_c())?;
        let q_ang = self.shape_angular(leaves, &q_raw, &gamma)?;
        self.shape_radial(leaves, &q_ang, &eta)
    }

    /// Trunk and attenuation branch: returns per-sample sigma of shape
    /// (N_a * N_r, N_c, N_u, N_b) and the shared trunk features.
    pub fn mp_forward(
        &self,
        leaves: &[DiffTensor],
        queries: &DiffTensor,
    ) -> Result<(DiffTensor, DiffTensor)> {
        let mut h = conv_fwd(queries, leaves, &self.arch.stem)?;
        h = gn_fwd(&h, leaves, &self.arch.stem_gn)?.gelu();
        for (block, fca) in &self.arch.trunk {
            h = block_fwd(&h, leaves, block)?;
            if self.config.fca_enabled {
                h = fca_fwd(&h, leaves, fca, &self.config.freqs_ghz)?;
            }
        }
        // The floor keeps every radiator faintly emissive: without it a
        // subcarrier whose softplus saturates renders exactly zero and its
        // gradients vanish, which is unrecoverable.
        let sigma = conv_fwd(&h, leaves, &self.arch.sigma_head)?
            .softplus()
            .add(&DiffTensor::scalar(SIGMA_FLOOR))?;
        Ok((sigma, h))
    }

    /// Coefficient branch: trunk features and the direction indicator are
    /// squeezed through a bottleneck and expanded back to one complex
    /// radiance coefficient per downlink subcarrier.
    pub fn ac_forward(
        &self,
        leaves: &[DiffTensor],
        trunk: &DiffTensor,
        gamma: &DiffTensor,
    ) -> Result<ComplexPair> {
        let cat = DiffTensor::concat(&[trunk.clone(), gamma.clone()], 1)?;
        let mut h = block_fwd(&cat, leaves, &self.arch.ac_down)?;
        if self.config.fca_enabled {
            h = fca_fwd(&h, leaves, &self.arch.ac_down_fca, &self.config.freqs_ghz)?;
        }
        h = block_fwd(&h, leaves, &self.arch.ac_up)?;
        if self.config.fca_enabled {
            h = fca_fwd(&h, leaves, &self.arch.ac_up_fca, &self.config.freqs_ghz)?;
        }
        let out = conv_fwd(&h, leaves, &self.arch.ac_head)?;
        Ok(split_complex(&out, self.config.n_c)?)
    }

    /// End-to-end field evaluation for one receiver position.
    pub fn forward(
        &self,
        leaves: &[DiffTensor],
        uplink: &CsiTensor,
        bundle: &RayBundle,
    ) -> Result<RadiatorField> {
        if uplink.n_c() != self.config.n_c {
            return Err(WirareError::Shape(format!(
                "uplink has {} subcarriers, model wants {}",
                uplink.n_c(),
                self.config.n_c
            )));
        }
        if bundle.n_radiators() != self.config.n_radiators {
            return Err(WirareError::Shape(format!(
                "bundle has {} radiators, model wants {}",
                bundle.n_radiators(),
                self.config.n_radiators
            )));
        }
        if bundle.n_u != uplink.n_u || bundle.n_b != uplink.n_b {
            return Err(WirareError::Shape(format!(
                "bundle is {}x{} antennas, uplink is {}x{}",
                bundle.n_u, bundle.n_b, uplink.n_u, uplink.n_b
            )));
        }
        let gamma = gamma_indicator(bundle)?;
        let queries = self.shape_queries(leaves, uplink, bundle)?;
        let (sigma, trunk) = self.mp_forward(leaves, &queries)?;
        let coeffs = self.ac_forward(leaves, &trunk, &gamma)?;
        Ok(RadiatorField::new(sigma, coeffs)?)
    }

    /// Analytic forward cost in floating-point operations for one query at
    /// the given sampling and antenna geometry. Counts the multiply-add
    /// dominated terms: convolutions, fully-connected stages, modulation,
    /// and the volume rendering itself.
    pub fn forward_flops(&self, n_rays: usize, n_u: usize, n_b: usize) -> u64 {
        let c = &self.config;
        let (n_c, n_h, s) = (c.n_c as u64, c.n_h as u64, c.shaping_width as u64);
        let n_r = c.n_radiators as u64;
        let (n_a, hw) = (n_rays as u64, (n_u * n_b) as u64);
        let rows = n_a * n_r;

        let conv = |b: u64, hw: u64, cin: u64, cout: u64, k: u64| b * hw * (2 * k * k * cin + 1) * cout;
        let fca = |b: u64, hw: u64, ch: u64, h: u64| {
            let fc = 2 * b * ((ch + n_c) * h + 2 * h * h + 2 * h * ch);
            b * ch * hw + fc + 2 * b * ch * hw
        };
        let block = |b: u64, hw: u64, cin: u64, cout: u64| {
            let mut t = conv(b, hw, cin, cout, 3) + conv(b, hw, cout, cout, 3);
            if cin != cout {
                t += conv(b, hw, cin, cout, 1);
            }
            t
        };

        let mut total = 0;
        total += conv(rows, hw, 2 * n_c + 3, s, 3) + conv(rows, hw, s, 2 * n_c, 3);
        total += conv(n_a, 2 * n_c * hw, 2 * n_r, s, 3) + conv(n_a, 2 * n_c * hw, s, n_r, 3);
        total += conv(rows, hw, 2 * n_c, n_h, 3);
        for _ in 0..c.blocks() {
            total += block(rows, hw, n_h, n_h);
            if c.fca_enabled {
                total += fca(rows, hw, n_h, c.fca_hidden as u64);
            }
        }
        total += conv(rows, hw, n_h, n_c, 3);
        total += block(rows, hw, n_h + 3, c.ac_mid as u64);
        total += block(rows, hw, c.ac_mid as u64, n_h);
        if c.fca_enabled {
            total += fca(rows, hw, c.ac_mid as u64, c.fca_hidden as u64);
            total += fca(rows, hw, n_h, c.fca_hidden as u64);
        }
        total += conv(rows, hw, n_h, 2 * n_c, 3);
        total += 16 * rows * n_c * hw;
        total
    }

    /// Write parameters (single precision) and an opaque training-state blob.
    pub fn save(&self, path: &Path, state: &[u8]) -> Result<()> {
        let config = serde_json::to_value(&self.config)
            .map_err(|e| WirareError::Format(format!("config serialization: {e}")))?;
        let params = self
            .reg
            .entries
            .iter()
            .map(|e| {
                let values: Vec<f32> = e.values.iter().map(|v| *v as f32).collect();
                (e.name.clone(), e.shape.clone(), values)
            })
            .collect();
        write_checkpoint(
            path,
            &Checkpoint {
                config,
                params,
                state: state.to_vec(),
            },
        )
    }

    /// Rebuild a model from a checkpoint, returning the training-state blob.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let ckpt = read_checkpoint(path)?;
        let config: WirareConfig = serde_json::from_value(ckpt.config)
            .map_err(|e| WirareError::Format(format!("config parse: {e}")))?;
        let mut model = Wirare::new(config)?;
        if ckpt.params.len() != model.reg.entries.len() {
            return Err(WirareError::Format(format!(
                "checkpoint has {} parameters, model wants {}",
                ckpt.params.len(),
                model.reg.entries.len()
            )));
        }
        for (i, (name, shape, values)) in ckpt.params.iter().enumerate() {
            let entry = &model.reg.entries[i];
            if *name != entry.name || *shape != entry.shape {
                return Err(WirareError::Format(format!(
                    "parameter {i} is {name} {shape:?}, model wants {} {:?}",
                    entry.name, entry.shape
                )));
            }
            model.reg.entries[i].values =
                Arc::new(values.iter().map(|v| *v as f64).collect::<Vec<f64>>());
        }
        Ok((model, ckpt.state))
    }
}

#[cfg(test)]
mod tests {
    use num_complex::Complex64;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::channel::{ArrayGeometry, ArrayPlane, OfdmGrid};
    use crate::renderer::RendererContext;
    use crate::tensor::grad_check;

    // Widths chosen so every group-norm site has at least two channels per
    // group; a single-channel group exactly absorbs the preceding conv bias,
    // which would leave that bias with no gradient.
    fn micro_config(seed: u64, init: InitMode) -> WirareConfig {
        WirareConfig {
            n_c: 2,
            n_radiators: 3,
            n_h: 16,
            depth: 3,
            shaping_width: 8,
            ac_mid: 12,
            fca_hidden: 16,
            fca_enabled: true,
            freqs_ghz: vec![2.44, 2.4425],
            init,
            seed,
        }
    }

    fn micro_bundle() -> RayBundle {
        let rx = ArrayGeometry::new(1, 2, 0.062, [0.0, 0.0, 0.0], ArrayPlane::Xy).unwrap();
        RayBundle::build(&rx, 2, 2, 3, 4.0).unwrap()
    }

    fn micro_uplink(seed: u64) -> CsiTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<Complex64> = (0..2 * 2 * 2)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        CsiTensor::new(vec![2.4e9, 2.4025e9], 2, 2, values).unwrap()
    }

    #[test]
    fn preset_parameter_counts_hit_targets() {
        let freqs: Vec<f64> = (0..26).map(|k| 3.4 + 1e-3 * k as f64).collect();
        let full = Wirare::new(WirareConfig::full(freqs.clone(), 32, 1)).unwrap();
        let lite = Wirare::new(WirareConfig::lite(freqs, 32, 1)).unwrap();
        assert_eq!(full.param_count(), 3_183_778);
        assert_eq!(lite.param_count(), 495_762);
        let full_dev = full.param_count() as f64 / 3.41e6 - 1.0;
        let lite_dev = lite.param_count() as f64 / 0.51e6 - 1.0;
        assert!(full_dev.abs() < 0.10, "full deviates {full_dev:.3}");
        assert!(lite_dev.abs() < 0.10, "lite deviates {lite_dev:.3}");
    }

    #[test]
    fn lite_preset_cuts_flops_by_at_least_80_percent() {
        let freqs: Vec<f64> = (0..8).map(|k| 2.44 + 1.25e-3 * k as f64).collect();
        let full = Wirare::new(WirareConfig::full(freqs.clone(), 16, 1)).unwrap();
        let lite = Wirare::new(WirareConfig::lite(freqs, 16, 1)).unwrap();
        let f = full.forward_flops(16, 4, 16) as f64;
        let l = lite.forward_flops(16, 4, 16) as f64;
        assert!(1.0 - l / f >= 0.80, "cut is only {:.3}", 1.0 - l / f);
    }

    #[test]
    fn doubling_bs_antennas_roughly_doubles_flops() {
        let freqs: Vec<f64> = (0..8).map(|k| 2.44 + 1.25e-3 * k as f64).collect();
        for model in [
            Wirare::new(WirareConfig::full(freqs.clone(), 16, 1)).unwrap(),
            Wirare::new(WirareConfig::lite(freqs, 16, 1)).unwrap(),
        ] {
            let base = model.forward_flops(16, 4, 16) as f64;
            let doubled = model.forward_flops(16, 4, 32) as f64;
            let ratio = doubled / base;
            assert!((1.85..=2.15).contains(&ratio), "ratio {ratio:.3}");
        }
    }

    #[test]
    fn shaping_is_identity_at_near_identity_init() {
        let model = Wirare::new(micro_config(3, InitMode::NearIdentity)).unwrap();
        let leaves = model.leaves();
        let bundle = micro_bundle();
        let uplink = micro_uplink(5);
        let q_raw = build_raw_queries(&uplink, &bundle).unwrap();
        let q = model.shape_queries(&leaves, &uplink, &bundle).unwrap();
        for (got, want) in q.values().iter().zip(q_raw.values()) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn shaping_composition_matches_staged_application() {
        let model = Wirare::new(micro_config(17, InitMode::Random)).unwrap();
        let leaves = model.leaves();
        let bundle = micro_bundle();
        let uplink = micro_uplink(6);
        let q_raw = build_raw_queries(&uplink, &bundle).unwrap();
        let gamma = gamma_indicator(&bundle).unwrap();
        let eta = eta_indicator(&bundle, uplink.n_c()).unwrap();
        let staged = {
            let ang = model.shape_angular(&leaves, &q_raw, &gamma).unwrap();
            model.shape_radial(&leaves, &ang, &eta).unwrap()
        };
        let composed = model.shape_queries(&leaves, &uplink, &bundle).unwrap();
        assert_eq!(composed.values(), staged.values());
    }

    #[test]
    fn forward_produces_renderable_field() {
        let model = Wirare::new(micro_config(23, InitMode::Random)).unwrap();
        let leaves = model.leaves();
        let bundle = micro_bundle();
        let uplink = micro_uplink(7);
        let field = model.forward(&leaves, &uplink, &bundle).unwrap();
        assert_eq!(field.sigma.shape(), &[6, 2, 2, 2]);
        assert!(field.sigma.values().iter().all(|s| *s > 0.0));
        let grid = OfdmGrid::new(16, 2, 2.5e6, 2.4e9, 40e6).unwrap();
        let ctx = RendererContext::new(&bundle, &grid).unwrap();
        let out = ctx.aggregate(&field).unwrap();
        assert_eq!(out.shape(), &[2, 2, 2]);
        assert!(out.to_complex().iter().all(|h| h.is_finite()));
    }

    #[test]
    fn disabling_fca_matches_fresh_init_exactly() {
        let enabled = Wirare::new(micro_config(31, InitMode::NearIdentity)).unwrap();
        let mut cfg = micro_config(31, InitMode::NearIdentity);
        cfg.fca_enabled = false;
        let disabled = Wirare::new(cfg).unwrap();
        let bundle = micro_bundle();
        let uplink = micro_uplink(9);
        let a = enabled
            .forward(&enabled.leaves(), &uplink, &bundle)
            .unwrap();
        let b = disabled
            .forward(&disabled.leaves(), &uplink, &bundle)
            .unwrap();
        assert_eq!(a.sigma.values(), b.sigma.values());
        assert_eq!(a.coeffs.re.values(), b.coeffs.re.values());
        assert_eq!(a.coeffs.im.values(), b.coeffs.im.values());
    }

    #[test]
    fn every_parameter_gets_gradient_on_random_init() {
        let model = Wirare::new(micro_config(41, InitMode::Random)).unwrap();
        let leaves = model.leaves();
        let bundle = micro_bundle();
        let uplink = micro_uplink(11);
        let grid = OfdmGrid::new(16, 2, 2.5e6, 2.4e9, 40e6).unwrap();
        let ctx = RendererContext::new(&bundle, &grid).unwrap();
        let field = model.forward(&leaves, &uplink, &bundle).unwrap();
        let out = ctx.aggregate(&field).unwrap();
        let loss = out.norm_sq().unwrap().sum_all();
        loss.backward().unwrap();
        for (leaf, entry) in leaves.iter().zip(model.entries()) {
            let grad = leaf.grad().expect("leaf wants grad");
            assert!(
                grad.iter().any(|g| *g != 0.0),
                "dead parameter {}",
                entry.name
            );
        }
    }

    #[test]
    fn forward_gradients_match_finite_differences() {
        let model = Wirare::new(micro_config(47, InitMode::Random)).unwrap();
        let leaves = model.leaves();
        let bundle = micro_bundle();
        let uplink = micro_uplink(13);
        let grid = OfdmGrid::new(16, 2, 2.5e6, 2.4e9, 40e6).unwrap();
        let ctx = RendererContext::new(&bundle, &grid).unwrap();
        let report = grad_check(
            |inputs| {
                let field = model
                    .forward(inputs, &uplink, &bundle)
                    .map_err(|e| TensorError::Invalid {
                        op: "wirare_forward",
                        msg: e.to_string(),
                    })?;
                let out = ctx.aggregate(&field).map_err(|e| TensorError::Invalid {
                    op: "aggregate",
                    msg: e.to_string(),
                })?;
                Ok(out.norm_sq()?.sum_all().scale(1e6).reshape(&[1])?)
            },
            &leaves,
            1e-5,
            2,
            99,
        )
        .unwrap();
        let worst = report
            .leaves
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
            .unwrap();
        assert!(
            report.passes(1e-3),
            "max rel err {} at {}",
            report.max_rel_err,
            model.entries()[worst.leaf].name
        );
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let model = Wirare::new(micro_config(53, InitMode::NearIdentity)).unwrap();
        let leaves = model.leaves();
        let bundle = micro_bundle();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let wrong: Vec<Complex64> = (0..3 * 2 * 2)
            .map(|_| Complex64::new(rng.gen(), rng.gen()))
            .collect();
        let uplink = CsiTensor::new(vec![2.4e9, 2.41e9, 2.42e9], 2, 2, wrong).unwrap();
        assert!(matches!(
            model.forward(&leaves, &uplink, &bundle),
            Err(WirareError::Shape(_))
        ));
        let bad_cfg = WirareConfig {
            depth: 2,
            ..micro_config(1, InitMode::Random)
        };
        assert!(matches!(Wirare::new(bad_cfg), Err(WirareError::Config(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let model = Wirare::new(micro_config(61, InitMode::Random)).unwrap();
        let first = dir.path().join("a.ckpt");
        let state: Vec<u8> = (0..32).collect();
        model.save(&first, &state).unwrap();
        let (loaded, loaded_state) = Wirare::load(&first).unwrap();
        assert_eq!(loaded_state, state);
        assert_eq!(loaded.config, model.config);
        let second = dir.path().join("b.ckpt");
        loaded.save(&second, &loaded_state).unwrap();
        assert_eq!(
            std::fs::read(&first).unwrap(),
            std::fs::read(&second).unwrap()
        );
    }

    #[test]
    fn checkpoint_rejects_tampered_parameter_table() {
        let dir = tempfile::tempdir().unwrap();
        let model = Wirare::new(micro_config(67, InitMode::NearIdentity)).unwrap();
        let path = dir.path().join("m.ckpt");
        model.save(&path, &[]).unwrap();
        let mut ckpt = read_checkpoint(&path).unwrap();
        ckpt.params[0].0 = "not.a.param".into();
        write_checkpoint(&path, &ckpt).unwrap();
        assert!(matches!(Wirare::load(&path), Err(WirareError::Format(_))));
    }
}
