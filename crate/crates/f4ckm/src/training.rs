//! NMSE-driven training: Adam, reduce-on-plateau scheduling, and a batched
//! loop with deterministic seeding, CSV epoch logs, and resumable
//! checkpoints.
//!
//! The loss for a batch of N_s samples with N_c subcarriers each is
//!
//!   (1/N_s) Σ_i (1/N_c) Σ_j ‖Ĥ_ij − H_ij‖² / ‖H_ij‖²
//!
//! with per-subcarrier normalization, so every subcarrier contributes at the
//! same scale regardless of its absolute channel energy.

use std::fs;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelError, CsiTensor, Dataset};
use crate::metrics::{self, MetricsError};
use crate::renderer::{RendererContext, RendererError};
use crate::sampler::{RayBundle, SamplerError};
use crate::tensor::{ComplexPair, DiffTensor, TensorError};
use crate::wirare::{InitMode, Wirare, WirareConfig, WirareError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("unusable dataset: {0}")]
    Data(String),
    #[error("non-finite {what} at epoch {epoch}")]
    NonFinite { epoch: usize, what: String },
    #[error("gradient for {name} contains NaN")]
    NanGradient { name: String },
    #[error("corrupt training state: {0}")]
    Format(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Renderer(#[from] RendererError),
    #[error(transparent)]
    Wirare(#[from] WirareError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, TrainError>;

/// Numeric storage width for parameters. Arithmetic always runs in f64;
/// `Single` rounds parameters to f32 after init and after every optimizer
/// step, which also makes the float32 checkpoint table lossless.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    Double,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub patience: usize,
    pub factor: f64,
    pub seed: u64,
    pub precision: Precision,
    /// Directions per ray bundle (N_a).
    pub rays: usize,
    /// Radial samples per ray (N_r).
    pub radiators: usize,
    /// Radial sampling range in meters.
    #[serde(rename = "range")]
    pub range_m: f64,
    /// Trunk width of the field network.
    pub n_h: usize,
    /// Convolutional depth of the field network.
    pub depth: usize,
    /// Channel width of the query-shaping convolutions.
    pub shaping_width: usize,
    /// Frequency-conditioned modulation on or off.
    pub fca: bool,
    /// Weight initialization for the field network.
    pub init: InitMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-5,
            batch: 8,
            epochs: 0,
            patience: 10,
            factor: 0.9,
            seed: 0,
            precision: Precision::Single,
            rays: 24,
            radiators: 32,
            range_m: 9.0,
            n_h: 32,
            depth: 4,
            shaping_width: 64,
            fca: true,
            init: InitMode::NearIdentity,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return bad(format!("factor must lie in (0, 1), got {}", self.factor));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.rays == 0 || self.radiators == 0 {
            return bad(format!(
                "rays ({}) and radiators ({}) must be positive",
                self.rays, self.radiators
            ));
        }
        if !(self.range_m > 0.0) {
            return bad(format!("range must be positive, got {}", self.range_m));
        }
        if self.shaping_width == 0 {
            return bad("shaping width must be at least 1".into());
        }
        Ok(())
    }
}

/// Per-subcarrier normalized squared error for one sample, differentiable
/// through the prediction. Truth slices with zero norm are rejected.
pub fn nmse_sample(pred: &ComplexPair, truth: &CsiTensor) -> Result<DiffTensor> {
    let shape = [truth.n_c(), truth.n_u, truth.n_b];
    if pred.shape() != shape {
        return Err(TrainError::Data(format!(
            "prediction shape {:?} does not match truth {:?}",
            pred.shape(),
            shape
        )));
    }
    let n_c = truth.n_c();
    let mut weights = Vec::with_capacity(n_c);
    for k in 0..n_c {
        let energy: f64 = truth.subcarrier(k).iter().map(|z| z.norm_sqr()).sum();
        if energy <= 0.0 {
            return Err(TrainError::Data(format!(
                "truth subcarrier {k} has zero norm"
            )));
        }
        weights.push(1.0 / (n_c as f64 * energy));
    }
    let truth_pair = ComplexPair::constant(&shape, &truth.values)?;
    let sq = pred.sub(&truth_pair)?.abs_sq()?;
    let w = DiffTensor::constant(&[n_c, 1, 1], weights)?;
    Ok(sq.mul(&w)?.sum_all())
}

/// Batch NMSE: mean of the per-sample losses.
pub fn nmse_loss(preds: &[ComplexPair], truths: &[CsiTensor]) -> Result<DiffTensor> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(TrainError::Data(format!(
            "batch wants matching non-empty predictions and truths, got {} and {}",
            preds.len(),
            truths.len()
        )));
    }
    let mut acc = nmse_sample(&preds[0], &truths[0])?;
    for (p, t) in preds.iter().zip(truths).skip(1) {
        acc = acc.add(&nmse_sample(p, t)?)?;
    }
    Ok(acc.scale(1.0 / preds.len() as f64))
}

/// Standard Adam with bias correction; moments live here, parameters are
/// plain buffers owned by the caller.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    pub fn new(sizes: &[usize]) -> Self {
        Adam {
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over every parameter buffer. NaN gradients abort before
    /// any state changes.
    pub fn step(
        &mut self,
        params: &mut [Vec<f64>],
        grads: &[Vec<f64>],
        lr: f64,
    ) -> std::result::Result<(), usize> {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count changed");
        for (i, g) in grads.iter().enumerate() {
            if g.iter().any(|x| x.is_nan()) {
                return Err(i);
            }
        }
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for k in 0..p.len() {
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Reduce-on-plateau: after `patience` consecutive validations without a
/// strict improvement of the best seen so far, the learning rate is
/// multiplied by `factor` and the counter resets. The first observation
/// establishes the best and counts as a non-improvement (nothing preceded
/// it), so a cold start of `patience` flat validations triggers one cut.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    lr: f64,
    factor: f64,
    patience: usize,
    best: Option<f64>,
    since: usize,
}

impl Plateau {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Plateau {
            lr,
            factor,
            patience,
            best: None,
            since: 0,
        }
    }

    /// Rebuild mid-training state from a checkpoint.
    pub fn from_parts(
        lr: f64,
        factor: f64,
        patience: usize,
        best: Option<f64>,
        since: usize,
    ) -> Self {
        Plateau {
            lr,
            factor,
            patience,
            best,
            since,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.since
    }

    /// Record one validation loss; returns the learning rate to use next.
    pub fn observe(&mut self, val: f64) -> f64 {
        match self.best {
            Some(best) if val < best => {
                self.best = Some(val);
                self.since = 0;
            }
            _ => {
                if self.best.is_none() {
                    self.best = Some(val);
                }
                self.since += 1;
                if self.since >= self.patience {
                    self.lr *= self.factor;
                    self.since = 0;
                }
            }
        }
        self.lr
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nmse: f64,
    pub val_nmse: f64,
    pub val_psnr_db: f64,
    /// Learning rate in effect during this epoch.
    pub lr: f64,
    pub wall_s: f64,
}

fn substream(seed: u64, index: u64, domain: u8) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    key[16] = domain;
    ChaCha8Rng::from_seed(key)
}

fn shuffled_indices(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = substream(seed, epoch as u64, 1);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

fn quantize_f32(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

/// Training-state blob carried inside checkpoints: the config, loop
/// counters, scheduler state, and Adam moments. Wall-clock time is excluded
/// so identical runs produce byte-identical checkpoints.
struct TrainState {
    cfg: TrainConfig,
    next_epoch: usize,
    adam: Adam,
    lr: f64,
    sched_best: Option<f64>,
    sched_since: usize,
    best_val: Option<f64>,
    /// Full-precision parameters, present in double mode where the float32
    /// checkpoint table would lose bits on resume.
    params_f64: Option<Vec<Vec<f64>>>,
}

const STATE_MAGIC: &[u8; 4] = b"F4TS";
const STATE_VERSION: u32 = 1;

fn put_f64_vec(out: &mut Vec<u8>, v: &[f64]) {
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_opt_f64(out: &mut Vec<u8>, v: Option<f64>) {
    match v {
        Some(x) => {
            out.push(1);
            out.extend_from_slice(&x.to_le_bytes());
        }
        None => {
            out.push(0);
            out.extend_from_slice(&0f64.to_le_bytes());
        }
    }
}

impl TrainState {
    fn encode(&self) -> Result<Vec<u8>> {
        let cfg = serde_json::to_vec(&self.cfg)
            .map_err(|e| TrainError::Format(format!("config serialization: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&STATE_VERSION.to_le_bytes());
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&(self.next_epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.adam.t.to_le_bytes());
        out.extend_from_slice(&self.lr.to_le_bytes());
        out.extend_from_slice(&(self.sched_since as u64).to_le_bytes());
        put_opt_f64(&mut out, self.sched_best);
        put_opt_f64(&mut out, self.best_val);
        out.extend_from_slice(&(self.adam.m.len() as u32).to_le_bytes());
        for m in &self.adam.m {
            put_f64_vec(&mut out, m);
        }
        for v in &self.adam.v {
            put_f64_vec(&mut out, v);
        }
        match &self.params_f64 {
            Some(params) => {
                out.push(1);
                for p in params {
                    put_f64_vec(&mut out, p);
                }
            }
            None => out.push(0),
        }
        Ok(out)
    }

    fn decode(blob: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: blob, at: 0 };
        if r.take(4)? != STATE_MAGIC {
            return Err(TrainError::Format("bad state magic".into()));
        }
        let version = r.u32()?;
        if version != STATE_VERSION {
            return Err(TrainError::Format(format!(
                "unsupported state version {version}"
            )));
        }
        let cfg_len = r.u32()? as usize;
        let cfg: TrainConfig = serde_json::from_slice(r.take(cfg_len)?)
            .map_err(|e| TrainError::Format(format!("config parse: {e}")))?;
        let next_epoch = r.u64()? as usize;
        let t = r.u64()?;
        let lr = r.f64()?;
        let sched_since = r.u64()? as usize;
        let sched_best = r.opt_f64()?;
        let best_val = r.opt_f64()?;
        let n_params = r.u32()? as usize;
        let mut m = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            m.push(r.f64_vec()?);
        }
        let mut v = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            v.push(r.f64_vec()?);
        }
        let params_f64 = match r.u8()? {
            0 => None,
            1 => {
                let mut params = Vec::with_capacity(n_params);
                for _ in 0..n_params {
                    params.push(r.f64_vec()?);
                }
                Some(params)
            }
            other => {
                return Err(TrainError::Format(format!(
                    "bad full-precision flag {other}"
                )))
            }
        };
        if r.at != blob.len() {
            return Err(TrainError::Format("trailing bytes in state blob".into()));
        }
        Ok(TrainState {
            cfg,
            next_epoch,
            adam: Adam { t, m, v },
            lr,
            sched_best,
            sched_since,
            best_val,
            params_f64,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(TrainError::Format("truncated state blob".into()));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn opt_f64(&mut self) -> Result<Option<f64>> {
        let flag = self.u8()?;
        let x = self.f64()?;
        match flag {
            0 => Ok(None),
            1 => Ok(Some(x)),
            other => Err(TrainError::Format(format!("bad option flag {other}"))),
        }
    }

    fn f64_vec(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > self.buf.len() {
            return Err(TrainError::Format("oversized vector in state blob".into()));
        }
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(self.f64()?);
        }
        Ok(v)
    }
}

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";

/// Train a fresh model on the dataset, writing `train_log.csv`,
/// `last.ckpt`, and `best.ckpt` into `out_dir`.
pub fn train(dataset: &Dataset, cfg: &TrainConfig, out_dir: &Path) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    let freqs_ghz: Vec<f64> = dataset
        .spec
        .grid
        .downlink_frequencies()
        .iter()
        .map(|f| f / 1e9)
        .collect();
    let mut wcfg = WirareConfig::preset(freqs_ghz, cfg.radiators, cfg.n_h, cfg.depth, cfg.seed);
    wcfg.shaping_width = cfg.shaping_width;
    wcfg.fca_enabled = cfg.fca;
    wcfg.init = cfg.init;
    let mut model = Wirare::new(wcfg)?;
    if cfg.precision == Precision::Single {
        for i in 0..model.entries().len() {
            let mut vals = model.entries()[i].values.as_ref().clone();
            quantize_f32(&mut vals);
            model.set_values(i, vals)?;
        }
    }
    let sizes: Vec<usize> = model.entries().iter().map(|e| e.numel()).collect();
    let adam = Adam::new(&sizes);
    let sched = Plateau::new(cfg.lr, cfg.factor, cfg.patience);
    run_loop(dataset, cfg.clone(), model, adam, sched, 0, None, out_dir)
}

/// Training configuration embedded in a checkpoint's state blob.
pub fn checkpoint_config(state_blob: &[u8]) -> Result<TrainConfig> {
    Ok(TrainState::decode(state_blob)?.cfg)
}

/// Continue training from a checkpoint; only the epoch budget is taken from
/// the caller, everything else comes from the stored state.
pub fn resume(
    dataset: &Dataset,
    checkpoint: &Path,
    epochs: usize,
    out_dir: &Path,
) -> Result<Vec<EpochRecord>> {
    let (mut model, blob) = Wirare::load(checkpoint)?;
    let state = TrainState::decode(&blob)?;
    if let Some(params) = &state.params_f64 {
        for (i, p) in params.iter().enumerate() {
            model.set_values(i, p.clone())?;
        }
    }
    let mut cfg = state.cfg;
    cfg.epochs = epochs;
    cfg.validate()?;
    let sched = Plateau::from_parts(
        state.lr,
        cfg.factor,
        cfg.patience,
        state.sched_best,
        state.sched_since,
    );
    run_loop(
        dataset,
        cfg,
        model,
        state.adam,
        sched,
        state.next_epoch,
        state.best_val,
        out_dir,
    )
}

/// Last sixth of the dataset (at least one sample) is held out as the test
/// split, matching a 5:1 train/test proportion.
pub fn split_index(n: usize) -> usize {
    n - (n / 6).max(1)
}

#[allow(clippy::too_many_arguments)]
fn run_loop(
    dataset: &Dataset,
    cfg: TrainConfig,
    mut model: Wirare,
    mut adam: Adam,
    mut sched: Plateau,
    start_epoch: usize,
    mut best_val: Option<f64>,
    out_dir: &Path,
) -> Result<Vec<EpochRecord>> {
    let spec = &dataset.spec;
    let n = dataset.samples.len();
    if n < 2 {
        return Err(TrainError::Data(format!(
            "need at least 2 samples to split train/test, got {n}"
        )));
    }
    if model.config.n_c != spec.grid.n_used {
        return Err(TrainError::Data(format!(
            "model predicts {} subcarriers, dataset has {}",
            model.config.n_c, spec.grid.n_used
        )));
    }
    let cut = split_index(n);
    let train_set = &dataset.samples[..cut];
    let test_set = &dataset.samples[cut..];

    let bundle = RayBundle::build(
        &spec.rx_template(),
        spec.n_b(),
        cfg.rays,
        cfg.radiators,
        cfg.range_m,
    )?;
    let downlink_freqs = spec.grid.downlink_frequencies();
    let ctx = RendererContext::at_frequencies(&bundle, &downlink_freqs)?;

    fs::create_dir_all(out_dir)?;
    let log_path = out_dir.join(TRAIN_LOG);
    let fresh = !log_path.exists();
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)?;
    if fresh {
        writeln!(log, "epoch,train_nmse,val_nmse,val_psnr_db,lr,wall_s")?;
    }

    let mut records = Vec::new();
    for epoch in start_epoch..cfg.epochs {
        let started = Instant::now();
        let order = shuffled_indices(train_set.len(), cfg.seed, epoch);
        let mut train_acc = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let leaves = model.leaves();
            for &i in chunk {
                let sample = &train_set[i];
                let field = model.forward(&leaves, &sample.uplink, &bundle)?;
                let pred = ctx.aggregate(&field)?;
                let loss = nmse_sample(&pred, &sample.downlink)?;
                let value = loss.values()[0];
                if !value.is_finite() {
                    return Err(TrainError::NonFinite {
                        epoch,
                        what: format!("training loss on sample {i}"),
                    });
                }
                train_acc += value;
                loss.scale(1.0 / chunk.len() as f64).backward()?;
            }
            let grads: Vec<Vec<f64>> = leaves
                .iter()
                .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()]))
                .collect();
            let mut params: Vec<Vec<f64>> = model
                .entries()
                .iter()
                .map(|e| e.values.as_ref().clone())
                .collect();
            adam.step(&mut params, &grads, sched.lr()).map_err(|i| {
                TrainError::NanGradient {
                    name: model.entries()[i].name.clone(),
                }
            })?;
            if cfg.precision == Precision::Single {
                for p in &mut params {
                    quantize_f32(p);
                }
            }
            for (i, p) in params.into_iter().enumerate() {
                model.set_values(i, p)?;
            }
        }
        let train_nmse = train_acc / train_set.len() as f64;

        let leaves = model.leaves();
        let mut val_acc = 0.0;
        let mut psnrs = Vec::with_capacity(test_set.len());
        for sample in test_set {
            let field = model.forward(&leaves, &sample.uplink, &bundle)?;
            let pred_pair = ctx.aggregate(&field)?;
            val_acc += nmse_sample(&pred_pair, &sample.downlink)?.values()[0];
            let pred = CsiTensor::new(
                downlink_freqs.clone(),
                sample.downlink.n_u,
                sample.downlink.n_b,
                pred_pair.to_complex(),
            )?;
            psnrs.push(metrics::psnr(&pred, &sample.downlink)?);
        }
        let val_nmse = val_acc / test_set.len() as f64;
        if !val_nmse.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                what: "validation loss".into(),
            });
        }
        let val_psnr_db = metrics::summarize(&psnrs)
            .median
            .unwrap_or(f64::INFINITY);
        let lr_used = sched.lr();
        let wall_s = started.elapsed().as_secs_f64();

        writeln!(
            log,
            "{epoch},{train_nmse},{val_nmse},{val_psnr_db},{lr_used},{wall_s}"
        )?;
        records.push(EpochRecord {
            epoch,
            train_nmse,
            val_nmse,
            val_psnr_db,
            lr: lr_used,
            wall_s,
        });

        sched.observe(val_nmse);
        let improved = best_val.map_or(true, |b| val_nmse < b);
        if improved {
            best_val = Some(val_nmse);
        }

        let state = TrainState {
            cfg: cfg.clone(),
            next_epoch: epoch + 1,
            adam: adam.clone(),
            lr: sched.lr(),
            sched_best: sched.best(),
            sched_since: sched.epochs_since_improvement(),
            best_val,
            params_f64: (cfg.precision == Precision::Double).then(|| {
                model
                    .entries()
                    .iter()
                    .map(|e| e.values.as_ref().clone())
                    .collect()
            }),
        };
        let blob = state.encode()?;
        model.save(&out_dir.join(LAST_CHECKPOINT), &blob)?;
        if improved {
            model.save(&out_dir.join(BEST_CHECKPOINT), &blob)?;
        }
    }
    Ok(records)
}

/// Paths produced by a training run.
pub fn checkpoint_paths(out_dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (
        out_dir.join(LAST_CHECKPOINT),
        out_dir.join(BEST_CHECKPOINT),
        out_dir.join(TRAIN_LOG),
    )
}

#[cfg(test)]
mod tests {
    use num_complex::Complex64;

    use super::*;
    use crate::channel::{generate_dataset, ArrayGeometry, ArrayPlane, OfdmGrid, SceneSpec};
    use crate::tensor::grad_check;

    fn random_truth(seed: u64, n_c: usize, n_u: usize, n_b: usize) -> CsiTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<Complex64> = (0..n_c * n_u * n_b)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let freqs: Vec<f64> = (0..n_c).map(|k| 2.4e9 + 1e6 * k as f64).collect();
        CsiTensor::new(freqs, n_u, n_b, values).unwrap()
    }

    fn pair_from(t: &CsiTensor) -> ComplexPair {
        ComplexPair::constant(&[t.n_c(), t.n_u, t.n_b], &t.values).unwrap()
    }

    #[test]
    fn nmse_of_exact_prediction_is_zero() {
        let truth = random_truth(1, 3, 2, 4);
        let loss = nmse_sample(&pair_from(&truth), &truth).unwrap();
        assert_eq!(loss.values()[0], 0.0);
    }

    #[test]
    fn nmse_of_zero_prediction_is_one() {
        let truth = random_truth(2, 4, 2, 3);
        let zero = ComplexPair::zeros(&[4, 2, 3]);
        let loss = nmse_sample(&zero, &truth).unwrap();
        assert!((loss.values()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nmse_matches_scalar_loop_oracle() {
        let truth = random_truth(3, 3, 2, 2);
        let pred_t = random_truth(4, 3, 2, 2);
        let pred = pair_from(&pred_t);
        let mut want = 0.0;
        for k in 0..3 {
            let mut err = 0.0;
            let mut norm = 0.0;
            for (p, t) in pred_t.subcarrier(k).iter().zip(truth.subcarrier(k)) {
                err += (p - t).norm_sqr();
                norm += t.norm_sqr();
            }
            want += err / norm;
        }
        want /= 3.0;
        let got = nmse_sample(&pred, &truth).unwrap().values()[0];
        assert!((got - want).abs() < 1e-12 * want.max(1.0), "{got} vs {want}");
    }

    #[test]
    fn nmse_rejects_zero_norm_truth_slice() {
        let mut truth = random_truth(5, 2, 2, 2);
        for v in &mut truth.values[4..8] {
            *v = Complex64::new(0.0, 0.0);
        }
        let pred = ComplexPair::zeros(&[2, 2, 2]);
        assert!(matches!(
            nmse_sample(&pred, &truth),
            Err(TrainError::Data(_))
        ));
    }

    #[test]
    fn batch_nmse_is_mean_of_samples() {
        let t1 = random_truth(6, 2, 2, 2);
        let t2 = random_truth(7, 2, 2, 2);
        let p1 = pair_from(&random_truth(8, 2, 2, 2));
        let p2 = pair_from(&random_truth(9, 2, 2, 2));
        let a = nmse_sample(&p1, &t1).unwrap().values()[0];
        let b = nmse_sample(&p2, &t2).unwrap().values()[0];
        let batch = nmse_loss(&[p1, p2], &[t1, t2]).unwrap().values()[0];
        assert!((batch - (a + b) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn nmse_gradient_matches_finite_differences() {
        let truth = random_truth(10, 2, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let re = DiffTensor::param(
            &[2, 2, 2],
            (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let im = DiffTensor::param(
            &[2, 2, 2],
            (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let t2 = truth.clone();
        let report = grad_check(
            move |l| {
                let pair = ComplexPair::new(l[0].clone(), l[1].clone())?;
                Ok(nmse_sample(&pair, &t2).expect("shapes verified above"))
            },
            &[re, im],
            1e-5,
            16,
            3,
        )
        .unwrap();
        assert!(report.passes(1e-6), "rel err {}", report.max_rel_err);
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut adam = Adam::new(&[3]);
        let mut params = vec![vec![0.5, -1.0, 2.0]];
        let grads = vec![vec![0.0, 0.0, 0.0]];
        adam.step(&mut params, &grads, 1e-3).unwrap();
        assert_eq!(params[0], vec![0.5, -1.0, 2.0]);
        assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr_signed() {
        for (g, sign) in [(2.0, 1.0), (-0.5, -1.0)] {
            let mut adam = Adam::new(&[1]);
            let mut params = vec![vec![0.3]];
            adam.step(&mut params, &[vec![g]], 5e-5).unwrap();
            let delta = params[0][0] - 0.3;
            assert!(
                (delta + sign * 5e-5).abs() < 1e-10,
                "g={g} moved by {delta}"
            );
        }
    }

    #[test]
    fn adam_is_bit_deterministic() {
        let run = || {
            let mut adam = Adam::new(&[2, 3]);
            let mut params = vec![vec![0.1, -0.2], vec![1.0, 2.0, -3.0]];
            for step in 0..5 {
                let s = step as f64;
                let grads = vec![vec![0.3 + s, -0.1], vec![s, -s, 0.5]];
                adam.step(&mut params, &grads, 1e-3).unwrap();
            }
            params
        };
        let a = run();
        let b = run();
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn adam_rejects_nan_gradients() {
        let mut adam = Adam::new(&[2]);
        let mut params = vec![vec![0.0, 0.0]];
        let before = params.clone();
        let err = adam.step(&mut params, &[vec![1.0, f64::NAN]], 1e-3);
        assert_eq!(err, Err(0));
        assert_eq!(params, before);
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn plateau_cuts_after_ten_flat_validations() {
        let mut sched = Plateau::new(5e-5, 0.9, 10);
        for i in 0..9 {
            assert_eq!(sched.observe(1.0), 5e-5, "cut too early at {i}");
        }
        assert_eq!(sched.observe(1.0), 5e-5 * 0.9);
        assert_eq!(sched.lr(), 4.5e-5);
    }

    #[test]
    fn plateau_cuts_twice_over_twenty_one_flat_validations() {
        let mut sched = Plateau::new(5e-5, 0.9, 10);
        let mut cuts = 0;
        let mut last = 5e-5;
        for _ in 0..21 {
            let lr = sched.observe(2.0);
            if lr < last {
                cuts += 1;
                last = lr;
            }
        }
        assert_eq!(cuts, 2);
        assert_eq!(sched.lr(), 5e-5 * 0.9 * 0.9);
    }

    #[test]
    fn plateau_holds_lr_while_improving() {
        let mut sched = Plateau::new(5e-5, 0.9, 10);
        for i in 0..50 {
            let lr = sched.observe(1.0 / (i + 1) as f64);
            assert_eq!(lr, 5e-5);
        }
    }

    #[test]
    fn lr_trace_is_a_pure_function_of_the_loss_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let losses: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..1.0)).collect();
        let trace = |seq: &[f64]| -> Vec<f64> {
            let mut sched = Plateau::new(1e-3, 0.5, 3);
            seq.iter().map(|&v| sched.observe(v)).collect()
        };
        assert_eq!(trace(&losses), trace(&losses));
        // Independent fold with the same contract.
        let mut lr = 1e-3;
        let mut best = f64::INFINITY;
        let mut since = 0usize;
        let mut first = true;
        let reference: Vec<f64> = losses
            .iter()
            .map(|&v| {
                if !first && v < best {
                    best = v;
                    since = 0;
                } else {
                    if first {
                        best = v;
                        first = false;
                    }
                    since += 1;
                    if since >= 3 {
                        lr *= 0.5;
                        since = 0;
                    }
                }
                lr
            })
            .collect();
        assert_eq!(trace(&losses), reference);
    }

    fn tiny_spec(n_samples: usize, seed: u64) -> SceneSpec {
        SceneSpec {
            room: [3.0, 3.0, 2.5],
            wall_reflection: 0.5,
            max_order: 0,
            tx: ArrayGeometry::new(2, 2, 0.062, [0.3, 1.5, 1.2], ArrayPlane::Yz).unwrap(),
            rx_rows: 1,
            rx_cols: 2,
            rx_spacing: 0.062,
            rx_plane: ArrayPlane::Xy,
            rx_margin: 0.3,
            grid: OfdmGrid::new(8, 2, 1.25e6, 2.415e9, 50e6).unwrap(),
            n_samples,
            seed,
        }
    }

    fn tiny_cfg(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: 3e-3,
            batch: 2,
            epochs,
            seed,
            rays: 4,
            radiators: 4,
            range_m: 5.0,
            n_h: 16,
            depth: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn overfit_probe_memorizes_four_samples() {
        // The held-out slot duplicates a training sample so validation
        // tracks the fit and the plateau scheduler reacts to real progress.
        let mut dataset = generate_dataset(&tiny_spec(4, 44)).unwrap();
        let dup = dataset.samples[0].clone();
        dataset.samples.push(dup);
        let mut cfg = tiny_cfg(200, 5);
        cfg.rays = 8;
        cfg.radiators = 8;
        let dir = tempdir("overfit");
        let records = train(&dataset, &cfg, &dir).unwrap();
        let final_nmse = records.last().unwrap().train_nmse;
        assert!(final_nmse < 1e-2, "failed to memorize: NMSE {final_nmse}");
        // Trend check: mean loss over consecutive 10-epoch windows past
        // epoch 50 never rises by more than 10%.
        let window = |lo: usize| -> f64 {
            records[lo..lo + 10].iter().map(|r| r.train_nmse).sum::<f64>() / 10.0
        };
        for lo in (50..190).step_by(10) {
            let (a, b) = (window(lo), window(lo + 10));
            assert!(b <= a * 1.1, "loss rose from {a} to {b} at epoch {lo}");
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn resume_reproduces_the_exact_next_epoch_loss() {
        let dataset = generate_dataset(&tiny_spec(6, 12)).unwrap();
        let dir_a = tempdir("resume_a");
        let full = train(&dataset, &tiny_cfg(3, 2), &dir_a).unwrap();
        let dir_b = tempdir("resume_b");
        let head = train(&dataset, &tiny_cfg(2, 2), &dir_b).unwrap();
        assert_eq!(head[0].train_nmse, full[0].train_nmse);
        assert_eq!(head[1].train_nmse, full[1].train_nmse);
        let tail = resume(&dataset, &dir_b.join(LAST_CHECKPOINT), 3, &dir_b).unwrap();
        assert_eq!(tail.len(), 1);
        assert_eq!(tail[0].epoch, 2);
        assert_eq!(tail[0].train_nmse, full[2].train_nmse);
        assert_eq!(tail[0].val_nmse, full[2].val_nmse);
        for dir in [dir_a, dir_b] {
            std::fs::remove_dir_all(&dir).unwrap();
        }
    }

    #[test]
    fn resume_is_exact_in_double_precision_too() {
        let dataset = generate_dataset(&tiny_spec(4, 13)).unwrap();
        let mut cfg = tiny_cfg(2, 3);
        cfg.precision = Precision::Double;
        let dir_a = tempdir("double_a");
        let full = train(&dataset, &cfg, &dir_a).unwrap();
        let dir_b = tempdir("double_b");
        let mut head_cfg = cfg.clone();
        head_cfg.epochs = 1;
        train(&dataset, &head_cfg, &dir_b).unwrap();
        let tail = resume(&dataset, &dir_b.join(LAST_CHECKPOINT), 2, &dir_b).unwrap();
        assert_eq!(tail[0].train_nmse, full[1].train_nmse);
        for dir in [dir_a, dir_b] {
            std::fs::remove_dir_all(&dir).unwrap();
        }
    }

    #[test]
    fn seed_change_alters_the_first_epoch_loss() {
        let dataset = generate_dataset(&tiny_spec(4, 14)).unwrap();
        let dir_a = tempdir("seed_a");
        let dir_b = tempdir("seed_b");
        let a = train(&dataset, &tiny_cfg(1, 1), &dir_a).unwrap();
        let b = train(&dataset, &tiny_cfg(1, 2), &dir_b).unwrap();
        assert_ne!(a[0].train_nmse, b[0].train_nmse);
        for dir in [dir_a, dir_b] {
            std::fs::remove_dir_all(&dir).unwrap();
        }
    }

    #[test]
    fn checkpoint_save_load_save_is_byte_identical() {
        let dataset = generate_dataset(&tiny_spec(4, 15)).unwrap();
        let dir = tempdir("roundtrip");
        train(&dataset, &tiny_cfg(1, 5), &dir).unwrap();
        let first = std::fs::read(dir.join(LAST_CHECKPOINT)).unwrap();
        let (model, blob) = Wirare::load(&dir.join(LAST_CHECKPOINT)).unwrap();
        let resaved = dir.join("resaved.ckpt");
        model.save(&resaved, &blob).unwrap();
        let second = std::fs::read(&resaved).unwrap();
        assert_eq!(first, second);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn training_writes_a_csv_log_with_one_row_per_epoch() {
        let dataset = generate_dataset(&tiny_spec(4, 16)).unwrap();
        let dir = tempdir("csvlog");
        train(&dataset, &tiny_cfg(2, 6), &dir).unwrap();
        let text = std::fs::read_to_string(dir.join(TRAIN_LOG)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,train_nmse,val_nmse,val_psnr_db,lr,wall_s");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,"));
        assert!(lines[2].starts_with("1,"));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn split_holds_out_the_last_sixth() {
        assert_eq!(split_index(512), 512 - 85);
        assert_eq!(split_index(6), 5);
        assert_eq!(split_index(4), 3);
        assert_eq!(split_index(2), 1);
    }

    fn tempdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("f4ckm_train_{tag}_{}", std::process::id()));
        if dir.exists() {
            std::fs::remove_dir_all(&dir).unwrap();
        }
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }
}
