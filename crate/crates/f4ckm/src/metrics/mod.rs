//! Downlink prediction quality metrics and evaluation plumbing.
//!
//! PSNR measures whole-tensor reconstruction fidelity, SGCS compares
//! dominant singular vectors per subcarrier (the beamforming-relevant
//! direction), and spectral efficiency scores the rate achieved when beams
//! picked from DFT codebooks on the *predicted* channel are applied to the
//! *true* channel. ESNR injection adds exactly-scaled estimation noise to
//! uplink measurements for robustness sweeps.

mod heatmap;
mod report;

pub use heatmap::{write_grid_csv, write_pgm16};
pub use report::{summarize, EvalReport, SummaryStats};

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelError, CsiTensor};
use crate::renderer::{RendererContext, RendererError};
use crate::sampler::RayBundle;
use crate::tensor::DiffTensor;
use crate::wirare::{Wirare, WirareError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate truth: {0}")]
    DegenerateTruth(String),
    #[error(
        "power iteration on subcarrier {subcarrier} stalled after {iterations} iterations \
         (residual {residual:.3e})"
    )]
    NonConvergent {
        subcarrier: usize,
        iterations: usize,
        residual: f64,
    },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Renderer(#[from] RendererError),
    #[error(transparent)]
    Wirare(#[from] WirareError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Format(String),
}

type Result<T> = std::result::Result<T, MetricsError>;

fn check_same_dims(pred: &CsiTensor, truth: &CsiTensor) -> Result<()> {
    if pred.n_c() != truth.n_c() || pred.n_u != truth.n_u || pred.n_b != truth.n_b {
        return Err(MetricsError::Shape(format!(
            "prediction is ({}, {}, {}), truth is ({}, {}, {})",
            pred.n_c(),
            pred.n_u,
            pred.n_b,
            truth.n_c(),
            truth.n_u,
            truth.n_b
        )));
    }
    Ok(())
}

/// Prediction signal-to-noise ratio in dB over the whole sample tensor:
/// -10 log10(|pred - truth|^2 / |truth|^2). An exact match returns the
/// +infinity sentinel; summaries exclude it.
pub fn psnr(pred: &CsiTensor, truth: &CsiTensor) -> Result<f64> {
    check_same_dims(pred, truth)?;
    let reference = truth.energy();
    if reference <= 0.0 {
        return Err(MetricsError::DegenerateTruth("zero-energy truth".into()));
    }
    let mut err = 0.0;
    for (p, t) in pred.values.iter().zip(&truth.values) {
        err += (p - t).norm_sqr();
    }
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * (err / reference).log10())
}

/// Which Gram matrix supplies the dominant eigenvector: `Right` uses H^H H
/// (precoder side, length N_b), `Left` uses H H^H (combiner side, length
/// N_u).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigSide {
    Right,
    Left,
}

fn gram(h: &CsiTensor, k: usize, side: EigSide) -> (Vec<Complex64>, usize) {
    let slab = h.subcarrier(k);
    let (n_u, n_b) = (h.n_u, h.n_b);
    match side {
        EigSide::Right => {
            let mut a = vec![Complex64::new(0.0, 0.0); n_b * n_b];
            for i in 0..n_b {
                for j in 0..n_b {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for u in 0..n_u {
                        acc += slab[u * n_b + i].conj() * slab[u * n_b + j];
                    }
                    a[i * n_b + j] = acc;
                }
            }
            (a, n_b)
        }
        EigSide::Left => {
            let mut a = vec![Complex64::new(0.0, 0.0); n_u * n_u];
            for i in 0..n_u {
                for j in 0..n_u {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for b in 0..n_b {
                        acc += slab[i * n_b + b] * slab[j * n_b + b].conj();
                    }
                    a[i * n_u + j] = acc;
                }
            }
            (a, n_u)
        }
    }
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Dominant eigenvector of a Hermitian PSD matrix by power iteration.
///
/// The matrix is trace-normalized first so the 1e-10 residual tolerance is
/// scale-free; globally scaling the input leaves every iterate bit-identical.
fn dominant_eigvec(
    a: &[Complex64],
    n: usize,
    subcarrier: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Complex64>> {
    let trace: f64 = (0..n).map(|i| a[i * n + i].re).sum();
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(MetricsError::DegenerateTruth(format!(
            "subcarrier {subcarrier} matrix has trace {trace}"
        )));
    }
    let scaled: Vec<Complex64> = a.iter().map(|z| z / trace).collect();
    let mut v: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    normalize(&mut v);
    let mut residual = f64::INFINITY;
    for _ in 0..10_000 {
        let y = matvec(&scaled, &v, n);
        let lambda: f64 = v.iter().zip(&y).map(|(vi, yi)| (vi.conj() * yi).re).sum();
        residual = v
            .iter()
            .zip(&y)
            .map(|(vi, yi)| (yi - lambda * vi).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if residual < 1e-10 {
            return Ok(v);
        }
        let norm: f64 = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-300 {
            break;
        }
        v = y;
        for z in &mut v {
            *z /= norm;
        }
    }
    Err(MetricsError::NonConvergent {
        subcarrier,
        iterations: 10_000,
        residual,
    })
}

fn matvec(a: &[Complex64], v: &[Complex64], n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|i| (0..n).map(|j| a[i * n + j] * v[j]).sum())
        .collect()
}

fn normalize(v: &mut [Complex64]) {
    let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        for z in v {
            *z /= norm;
        }
    }
}

/// Squared generalized cosine similarity, averaged over subcarriers: the
/// squared overlap between the dominant eigenvectors derived from the true
/// and predicted channels. Invariant to global phase and scale of either
/// argument.
pub fn sgcs(pred: &CsiTensor, truth: &CsiTensor, side: EigSide, seed: u64) -> Result<f64> {
    check_same_dims(pred, truth)?;
    let n_c = truth.n_c();
    let mut acc = 0.0;
    for k in 0..n_c {
        let (at, n) = gram(truth, k, side);
        let (ap, _) = gram(pred, k, side);
        let mut rng = stream(seed, k as u64);
        let w = dominant_eigvec(&at, n, k, &mut rng)?;
        let mut rng = stream(seed, k as u64);
        let w_hat = dominant_eigvec(&ap, n, k, &mut rng)?;
        let overlap: Complex64 = w.iter().zip(&w_hat).map(|(a, b)| a.conj() * b).sum();
        acc += overlap.norm_sqr().min(1.0);
    }
    Ok(acc / n_c as f64)
}

fn dft_vector(n: usize, m: usize) -> Vec<Complex64> {
    let scale = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|k| {
            let phase = -2.0 * std::f64::consts::PI * (m * k) as f64 / n as f64;
            Complex64::from_polar(scale, phase)
        })
        .collect()
}

fn beam_gain(h: &CsiTensor, k: usize, w: &[Complex64], f: &[Complex64]) -> f64 {
    let slab = h.subcarrier(k);
    let mut acc = Complex64::new(0.0, 0.0);
    for u in 0..h.n_u {
        for b in 0..h.n_b {
            acc += w[u].conj() * slab[u * h.n_b + b] * f[b];
        }
    }
    acc.norm_sqr()
}

/// Exhaustive search over the unit-normalized DFT codebooks for the
/// combiner/precoder pair maximizing mean beamformed gain on `pred`.
/// Ties resolve to the lowest (combiner, precoder) index pair.
pub fn select_beams(pred: &CsiTensor) -> (usize, usize) {
    let combiners: Vec<Vec<Complex64>> = (0..pred.n_u).map(|m| dft_vector(pred.n_u, m)).collect();
    let precoders: Vec<Vec<Complex64>> = (0..pred.n_b).map(|m| dft_vector(pred.n_b, m)).collect();
    let n_c = pred.n_c();
    let mut best = (0usize, 0usize);
    let mut best_gain = f64::NEG_INFINITY;
    for (wi, w) in combiners.iter().enumerate() {
        for (fi, f) in precoders.iter().enumerate() {
            let gain: f64 =
                (0..n_c).map(|k| beam_gain(pred, k, w, f)).sum::<f64>() / n_c as f64;
            if gain > best_gain {
                best_gain = gain;
                best = (wi, fi);
            }
        }
    }
    best
}

/// Spectral efficiency in bps/Hz: beams are selected on the predicted
/// channel, the rate log2(1 + gamma * gain) is averaged over subcarriers of
/// the true channel.
pub fn spectral_efficiency(pred: &CsiTensor, truth: &CsiTensor, gamma_db: f64) -> Result<f64> {
    check_same_dims(pred, truth)?;
    let (wi, fi) = select_beams(pred);
    let w = dft_vector(truth.n_u, wi);
    let f = dft_vector(truth.n_b, fi);
    let gamma = 10f64.powf(gamma_db / 10.0);
    let n_c = truth.n_c();
    let rate: f64 = (0..n_c)
        .map(|k| (1.0 + gamma * beam_gain(truth, k, &w, &f)).log2())
        .sum();
    Ok(rate / n_c as f64)
}

/// Add circularly-symmetric Gaussian noise to uplink CSI, rescaled after the
/// draw so the realized estimation SNR equals `esnr_db` up to rounding.
/// Infinite ESNR (or zero-energy input) returns the input unchanged.
pub fn inject_esnr(uplink: &CsiTensor, esnr_db: f64, seed: u64) -> CsiTensor {
    let energy = uplink.energy();
    if esnr_db == f64::INFINITY || energy == 0.0 {
        return uplink.clone();
    }
    let mut rng = stream(seed, 0x4e4f495345);
    let noise: Vec<Complex64> = (0..uplink.values.len())
        .map(|_| {
            // Box-Muller; u1 in (0,1] keeps the log finite.
            let u1 = 1.0 - rng.gen::<f64>();
            let u2 = rng.gen::<f64>();
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            Complex64::new(r * theta.cos(), r * theta.sin())
        })
        .collect();
    let actual: f64 = noise.iter().map(|z| z.norm_sqr()).sum();
    let target = energy * 10f64.powf(-esnr_db / 10.0);
    let scale = (target / actual).sqrt();
    let values: Vec<Complex64> = uplink
        .values
        .iter()
        .zip(&noise)
        .map(|(h, n)| h + n * scale)
        .collect();
    CsiTensor::new(
        uplink.frequencies.clone(),
        uplink.n_u,
        uplink.n_b,
        values,
    )
    .expect("noisy copy keeps the input's dimensions")
}

/// Analytic per-forward FLOP count for a model at the given sampling and
/// antenna geometry.
pub fn flop_count(model: &Wirare, n_rays: usize, n_u: usize, n_b: usize) -> u64 {
    model.forward_flops(n_rays, n_u, n_b)
}

/// Run the field network and render the downlink CSI prediction.
pub fn predict_downlink(
    model: &Wirare,
    leaves: &[DiffTensor],
    ctx: &RendererContext,
    bundle: &RayBundle,
    uplink: &CsiTensor,
    downlink_freqs: &[f64],
) -> Result<CsiTensor> {
    let field = model.forward(leaves, uplink, bundle)?;
    let out = ctx.aggregate(&field)?;
    Ok(CsiTensor::new(
        downlink_freqs.to_vec(),
        uplink.n_u,
        uplink.n_b,
        out.to_complex(),
    )?)
}

/// Evaluation knobs shared by the CLI and tests.
#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub gamma_db: f64,
    pub side: EigSide,
    pub seed: u64,
    /// Inject estimation noise into each uplink before prediction.
    pub esnr_db: Option<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            gamma_db: 10.0,
            side: EigSide::Right,
            seed: 0,
            esnr_db: None,
        }
    }
}

fn per_sample_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn maybe_noisy(uplink: &CsiTensor, opts: &EvalOptions, index: usize) -> CsiTensor {
    match opts.esnr_db {
        Some(e) => inject_esnr(uplink, e, per_sample_seed(opts.seed, index)),
        None => uplink.clone(),
    }
}

/// Score a model over dataset samples: per-sample PSNR, SGCS, and spectral
/// efficiency of the rendered downlink prediction against the ground truth.
pub fn evaluate(
    model: &Wirare,
    leaves: &[DiffTensor],
    ctx: &RendererContext,
    bundle: &RayBundle,
    samples: &[crate::channel::Sample],
    downlink_freqs: &[f64],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let mut psnr_db = Vec::with_capacity(samples.len());
    let mut sgcs_v = Vec::with_capacity(samples.len());
    let mut se_v = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let uplink = maybe_noisy(&sample.uplink, opts, i);
        let pred = predict_downlink(model, leaves, ctx, bundle, &uplink, downlink_freqs)?;
        psnr_db.push(psnr(&pred, &sample.downlink)?);
        sgcs_v.push(sgcs(&pred, &sample.downlink, opts.side, opts.seed)?);
        se_v.push(spectral_efficiency(&pred, &sample.downlink, opts.gamma_db)?);
    }
    Ok(EvalReport::from_samples(psnr_db, sgcs_v, se_v))
}

/// Score the copy-uplink baseline: the (possibly noise-injected) uplink
/// measurement reused verbatim as the downlink prediction.
pub fn baseline_report(
    samples: &[crate::channel::Sample],
    downlink_freqs: &[f64],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let mut psnr_db = Vec::with_capacity(samples.len());
    let mut sgcs_v = Vec::with_capacity(samples.len());
    let mut se_v = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let uplink = maybe_noisy(&sample.uplink, opts, i);
        let pred = CsiTensor::new(
            downlink_freqs.to_vec(),
            uplink.n_u,
            uplink.n_b,
            uplink.values.clone(),
        )?;
        psnr_db.push(psnr(&pred, &sample.downlink)?);
        sgcs_v.push(sgcs(&pred, &sample.downlink, opts.side, opts.seed)?);
        se_v.push(spectral_efficiency(&pred, &sample.downlink, opts.gamma_db)?);
    }
    Ok(EvalReport::from_samples(psnr_db, sgcs_v, se_v))
}
