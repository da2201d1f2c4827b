//! Learnable layer primitives: convolution, group norm, fully-connected,
//! residual blocks, and frequency-conditioned affine (FCA) modulation.
//!
//! Parameters live in a flat named registry. Layer descriptors hold indices
//! into that registry, and every forward helper takes the leaf slice produced
//! by [`Registry`] order, so construction order is the single source of truth
//! for parameter identity across checkpoints and optimizer state.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{ComplexPair, DiffTensor, Result as TensorResult};

/// Group-norm epsilon shared by every normalization site.
pub const GN_EPS: f64 = 1e-6;

/// Number of groups for `c` channels: 8 when divisible, the channel count
/// itself below 8, otherwise the largest divisor of `c` not exceeding 8.
pub fn groups_for(c: usize) -> usize {
    if c == 0 {
        return 1;
    }
    if c % 8 == 0 {
        return 8;
    }
    if c < 8 {
        return c;
    }
    (1..=8).rev().find(|g| c % g == 0).unwrap_or(1)
}

/// Group count for normalizing rank-2 activations, where channels are the
/// only samples per group. Groups of fewer than four values saturate the
/// normalized output toward its sign, killing gradients, so the group count
/// is capped to keep at least four channels per group.
pub fn groups_for_flat(c: usize) -> usize {
    (1..=8)
        .rev()
        .find(|g| c % g == 0 && c / g >= 4)
        .unwrap_or(1)
}

/// How fresh parameters are drawn.
///
/// `NearIdentity` zeroes the closing layer of every residual branch so the
/// whole network starts as a benign near-identity map. `Random` draws those
/// closing layers like any other, which guarantees gradient flow into every
/// parameter and is what gradient-check fixtures want.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum InitMode {
    NearIdentity,
    Random,
}

/// One named learnable tensor. The value buffer is shared with any leaf
/// tensors built from it; optimizer steps swap in a fresh buffer instead of
/// mutating, so live graphs are never invalidated.
#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Arc<Vec<f64>>,
}

impl ParamEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered parameter registry with a seeded initializer stream.
pub struct Registry {
    pub entries: Vec<ParamEntry>,
    rng: ChaCha8Rng,
    init: InitMode,
}

impl Registry {
    pub fn new(seed: u64, init: InitMode) -> Self {
        Registry {
            entries: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            init,
        }
    }

    fn push(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> usize {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            values: Arc::new(values),
        });
        self.entries.len() - 1
    }

    /// He-uniform draw over `fan_in` inputs.
    fn he(&mut self, name: &str, shape: &[usize], fan_in: usize) -> usize {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.push(name, shape, values)
    }

    /// Zero in near-identity mode, He-uniform in random mode. The random
    /// branch still consumes the same RNG draws so both modes stay aligned.
    fn closing(&mut self, name: &str, shape: &[usize], fan_in: usize) -> usize {
        let idx = self.he(name, shape, fan_in);
        if self.init == InitMode::NearIdentity {
            let n = self.entries[idx].numel();
            self.entries[idx].values = Arc::new(vec![0.0; n]);
        }
        idx
    }

    fn fill(&mut self, name: &str, shape: &[usize], v: f64) -> usize {
        let n: usize = shape.iter().product();
        self.push(name, shape, vec![v; n])
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> ConvP {
        let kernel = self.he(&format!("{name}.kernel"), &[cout, cin, k, k], cin * k * k);
        let bias = self.fill(&format!("{name}.bias"), &[cout], 0.0);
        ConvP { kernel, bias, k }
    }

    /// Convolution whose weights and bias start at zero in near-identity
    /// mode, closing a residual branch.
    pub fn conv_closing(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> ConvP {
        let kernel = self.closing(&format!("{name}.kernel"), &[cout, cin, k, k], cin * k * k);
        let bias = self.fill(&format!("{name}.bias"), &[cout], 0.0);
        ConvP { kernel, bias, k }
    }

    pub fn gn(&mut self, name: &str, c: usize) -> GnP {
        let gamma = self.fill(&format!("{name}.gamma"), &[c], 1.0);
        let beta = self.fill(&format!("{name}.beta"), &[c], 0.0);
        GnP {
            gamma,
            beta,
            groups: groups_for(c),
        }
    }

    /// Group norm sized for rank-2 activations.
    fn gn_flat(&mut self, name: &str, c: usize) -> GnP {
        let gamma = self.fill(&format!("{name}.gamma"), &[c], 1.0);
        let beta = self.fill(&format!("{name}.beta"), &[c], 0.0);
        GnP {
            gamma,
            beta,
            groups: groups_for_flat(c),
        }
    }

    pub fn fc(&mut self, name: &str, nin: usize, nout: usize) -> FcP {
        let weight = self.he(&format!("{name}.weight"), &[nout, nin], nin);
        let bias = self.fill(&format!("{name}.bias"), &[nout], 0.0);
        FcP { weight, bias }
    }

    fn fc_closing(&mut self, name: &str, nin: usize, nout: usize) -> FcP {
        let weight = self.closing(&format!("{name}.weight"), &[nout, nin], nin);
        let bias = self.fill(&format!("{name}.bias"), &[nout], 0.0);
        FcP { weight, bias }
    }

    /// Residual block: two 3x3 convolutions with group norm and GELU, a
    /// shortcut that is the identity when channel counts match and a 1x1
    /// convolution otherwise, and a closing GELU after the sum.
    pub fn block(&mut self, name: &str, cin: usize, cout: usize) -> BlockP {
        let conv1 = self.conv(&format!("{name}.conv1"), cin, cout, 3);
        let gn1 = self.gn(&format!("{name}.gn1"), cout);
        let conv2 = self.conv_closing(&format!("{name}.conv2"), cout, cout, 3);
        let gn2 = self.gn(&format!("{name}.gn2"), cout);
        let shortcut = if cin == cout {
            None
        } else {
            Some(self.conv(&format!("{name}.shortcut"), cin, cout, 1))
        };
        BlockP {
            conv1,
            gn1,
            conv2,
            gn2,
            shortcut,
        }
    }

    /// FCA module for `c` feature channels conditioned on `n_c` subcarrier
    /// frequencies, with hidden width `hidden`. The weight and bias heads
    /// start at zero so modulation is the exact identity at initialization.
    pub fn fca(&mut self, name: &str, c: usize, n_c: usize, hidden: usize) -> FcaP {
        let fc1 = self.fc(&format!("{name}.fc1"), c + n_c, hidden);
        let gn1 = self.gn_flat(&format!("{name}.gn1"), hidden);
        let fc2 = self.fc(&format!("{name}.fc2"), hidden, hidden);
        let gn2 = self.gn_flat(&format!("{name}.gn2"), hidden);
        let fc3 = self.fc(&format!("{name}.fc3"), hidden, hidden);
        let gn3 = self.gn_flat(&format!("{name}.gn3"), hidden);
        let w_head = self.fc_closing(&format!("{name}.w"), hidden, c);
        let b_head = self.fc_closing(&format!("{name}.b"), hidden, c);
        FcaP {
            fc1,
            gn1,
            fc2,
            gn2,
            fc3,
            gn3,
            w_head,
            b_head,
            n_c,
        }
    }

    /// Leaf tensors over the current value buffers, in registry order.
    pub fn leaves(&self) -> Vec<DiffTensor> {
        self.entries
            .iter()
            .map(|e| {
                DiffTensor::param_shared(&e.shape, e.values.clone())
                    .expect("registry shapes are consistent by construction")
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(ParamEntry::numel).sum()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvP {
    pub kernel: usize,
    pub bias: usize,
    pub k: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GnP {
    pub gamma: usize,
    pub beta: usize,
    pub groups: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct FcP {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BlockP {
    pub conv1: ConvP,
    pub gn1: GnP,
    pub conv2: ConvP,
    pub gn2: GnP,
    pub shortcut: Option<ConvP>,
}

#[derive(Clone, Debug)]
pub struct FcaP {
    pub fc1: FcP,
    pub gn1: GnP,
    pub fc2: FcP,
    pub gn2: GnP,
    pub fc3: FcP,
    pub gn3: GnP,
    pub w_head: FcP,
    pub b_head: FcP,
    pub n_c: usize,
}

pub fn conv_fwd(x: &DiffTensor, leaves: &[DiffTensor], p: &ConvP) -> TensorResult<DiffTensor> {
    x.conv2d(&leaves[p.kernel], &leaves[p.bias], 1, p.k / 2)
}

pub fn gn_fwd(x: &DiffTensor, leaves: &[DiffTensor], p: &GnP) -> TensorResult<DiffTensor> {
    x.group_norm(&leaves[p.gamma], &leaves[p.beta], p.groups, GN_EPS)
}

pub fn fc_fwd(x: &DiffTensor, leaves: &[DiffTensor], p: &FcP) -> TensorResult<DiffTensor> {
    x.linear(&leaves[p.weight], &leaves[p.bias])
}

/// Group norm over a (B, N) fully-connected activation.
fn gn_fwd_flat(x: &DiffTensor, leaves: &[DiffTensor], p: &GnP) -> TensorResult<DiffTensor> {
    let [b, n] = *x.shape() else {
        unreachable!("fca activations are rank 2");
    };
    let out = gn_fwd(&x.reshape(&[b, n, 1, 1])?, leaves, p)?;
    out.reshape(&[b, n])
}

pub fn block_fwd(x: &DiffTensor, leaves: &[DiffTensor], p: &BlockP) -> TensorResult<DiffTensor> {
    let mut h = conv_fwd(x, leaves, &p.conv1)?;
    h = gn_fwd(&h, leaves, &p.gn1)?.gelu();
    h = conv_fwd(&h, leaves, &p.conv2)?;
    h = gn_fwd(&h, leaves, &p.gn2)?;
    let skip = match &p.shortcut {
        Some(sc) => conv_fwd(x, leaves, sc)?,
        None => x.clone(),
    };
    Ok(h.add(&skip)?.gelu())
}

/// Frequency-conditioned affine modulation.
///
/// Spatially pooled features are merged with the subcarrier frequencies (GHz)
/// and pushed through three fully-connected stages; two heads emit per-sample,
/// per-channel weights and biases applied as `(1 + w) * x + b`. With zeroed
/// heads the output equals the input bit for bit.
pub fn fca_fwd(
    x: &DiffTensor,
    leaves: &[DiffTensor],
    p: &FcaP,
    freqs_ghz: &[f64],
) -> TensorResult<DiffTensor> {
    let [b, c, _, _] = *x.shape() else {
        unreachable!("fca input is rank 4");
    };
    debug_assert_eq!(freqs_ghz.len(), p.n_c);
    let pooled = x.mean_pool_spatial()?;
    let mut fvals = Vec::with_capacity(b * p.n_c);
    for _ in 0..b {
        fvals.extend_from_slice(freqs_ghz);
    }
    let fvec = DiffTensor::constant(&[b, p.n_c], fvals)?;
    let mut h = DiffTensor::concat(&[pooled, fvec], 1)?;
    h = fc_fwd(&h, leaves, &p.fc1)?;
    h = gn_fwd_flat(&h, leaves, &p.gn1)?.gelu();
    h = fc_fwd(&h, leaves, &p.fc2)?;
    h = gn_fwd_flat(&h, leaves, &p.gn2)?.gelu();
    h = fc_fwd(&h, leaves, &p.fc3)?;
    h = gn_fwd_flat(&h, leaves, &p.gn3)?.gelu();
    let w = fc_fwd(&h, leaves, &p.w_head)?.reshape(&[b, c, 1, 1])?;
    let bias = fc_fwd(&h, leaves, &p.b_head)?.reshape(&[b, c, 1, 1])?;
    let one = DiffTensor::constant(&[1], vec![1.0])?;
    x.mul(&one.add(&w)?)?.add(&bias)
}

/// Split a (B, 2*N_c, H, W) tensor into a complex pair along the channel
/// axis: real parts first, imaginary parts second.
pub fn split_complex(x: &DiffTensor, n_c: usize) -> TensorResult<ComplexPair> {
    let re = x.narrow(1, 0, n_c)?;
    let im = x.narrow(1, n_c, n_c)?;
    ComplexPair::new(re, im)
}

/// Standalone FCA module for direct use and tests.
pub struct FcaModule {
    reg: Registry,
    p: FcaP,
}

impl FcaModule {
    pub fn new(c: usize, n_c: usize, hidden: usize, seed: u64, init: InitMode) -> Self {
        let mut reg = Registry::new(seed, init);
        let p = reg.fca("fca", c, n_c, hidden);
        FcaModule { reg, p }
    }

    pub fn leaves(&self) -> Vec<DiffTensor> {
        self.reg.leaves()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.reg.entries
    }

    pub fn set_values(&mut self, idx: usize, values: Vec<f64>) {
        assert_eq!(values.len(), self.reg.entries[idx].numel());
        self.reg.entries[idx].values = Arc::new(values);
    }

    pub fn modulate(
        &self,
        leaves: &[DiffTensor],
        features: &DiffTensor,
        freqs_ghz: &[f64],
    ) -> TensorResult<DiffTensor> {
        fca_fwd(features, leaves, &self.p, freqs_ghz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_follow_channel_rule() {
        assert_eq!(groups_for(128), 8);
        assert_eq!(groups_for(16), 8);
        assert_eq!(groups_for(5), 5);
        assert_eq!(groups_for(12), 6);
        assert_eq!(groups_for(35), 7);
        assert_eq!(groups_for(13), 1);
        assert_eq!(groups_for_flat(256), 8);
        assert_eq!(groups_for_flat(16), 4);
        assert_eq!(groups_for_flat(8), 2);
    }

    #[test]
    fn fca_is_identity_at_near_identity_init() {
        let module = FcaModule::new(6, 4, 16, 11, InitMode::NearIdentity);
        let leaves = module.leaves();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..2 * 6 * 3 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = DiffTensor::constant(&[2, 6, 3, 5], vals.clone()).unwrap();
        let out = module
            .modulate(&leaves, &x, &[2.40, 2.41, 2.42, 2.43])
            .unwrap();
        assert_eq!(out.values(), vals.as_slice());
    }

    #[test]
    fn fca_depends_on_frequency_after_perturbing_heads() {
        let mut module = FcaModule::new(4, 2, 16, 5, InitMode::NearIdentity);
        let w_idx = module
            .entries()
            .iter()
            .position(|e| e.name == "fca.w.weight")
            .unwrap();
        let n = module.entries()[w_idx].numel();
        module.set_values(w_idx, vec![0.05; n]);
        let leaves = module.leaves();
        let x = DiffTensor::constant(&[1, 4, 2, 2], vec![1.0; 16]).unwrap();
        let lo = module.modulate(&leaves, &x, &[2.4, 2.41]).unwrap();
        let hi = module.modulate(&leaves, &x, &[2.45, 2.46]).unwrap();
        let diff: f64 = lo
            .values()
            .iter()
            .zip(hi.values())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-9, "modulation ignored the frequency input");
    }

    #[test]
    fn zeroed_block_convs_reduce_to_gelu_of_input() {
        let mut reg = Registry::new(9, InitMode::Random);
        let p = reg.block("blk", 4, 4);
        for idx in [p.conv1.kernel, p.conv1.bias, p.conv2.kernel, p.conv2.bias] {
            let n = reg.entries[idx].numel();
            reg.entries[idx].values = Arc::new(vec![0.0; n]);
        }
        let leaves = reg.leaves();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let vals: Vec<f64> = (0..2 * 4 * 3 * 3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = DiffTensor::constant(&[2, 4, 3, 3], vals.clone()).unwrap();
        let out = block_fwd(&x, &leaves, &p).unwrap();
        let want = x.gelu();
        for (got, want) in out.values().iter().zip(want.values()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn near_identity_block_passes_gelu_of_input() {
        let mut reg = Registry::new(2, InitMode::NearIdentity);
        let p = reg.block("blk", 6, 6);
        let leaves = reg.leaves();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let vals: Vec<f64> = (0..6 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = DiffTensor::constant(&[1, 6, 2, 2], vals).unwrap();
        let out = block_fwd(&x, &leaves, &p).unwrap();
        let want = x.gelu();
        for (got, want) in out.values().iter().zip(want.values()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_changing_block_uses_conv_shortcut() {
        let mut reg = Registry::new(4, InitMode::NearIdentity);
        let p = reg.block("blk", 3, 5);
        assert!(p.shortcut.is_some());
        let leaves = reg.leaves();
        let x = DiffTensor::constant(&[1, 3, 2, 2], vec![0.5; 12]).unwrap();
        let out = block_fwd(&x, &leaves, &p).unwrap();
        assert_eq!(out.shape(), &[1, 5, 2, 2]);
    }

    #[test]
    fn init_modes_share_the_randomness_stream() {
        let a = Registry::new(7, InitMode::NearIdentity);
        let b = Registry::new(7, InitMode::Random);
        let mut ra = a;
        let mut rb = b;
        let pa = ra.block("blk", 4, 4);
        let pb = rb.block("blk", 4, 4);
        assert_eq!(
            ra.entries[pa.conv1.kernel].values,
            rb.entries[pb.conv1.kernel].values
        );
        assert!(ra.entries[pa.conv2.kernel].values.iter().all(|v| *v == 0.0));
        assert!(rb.entries[pb.conv2.kernel].values.iter().any(|v| *v != 0.0));
    }
}
