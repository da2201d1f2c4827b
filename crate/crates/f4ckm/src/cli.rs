//! Command-line operator surface: dataset synthesis, training, evaluation,
//! ESNR sweeps, gradient checks, complexity benchmarks, and channel-gain
//! heatmaps.
//!
//! Every run records the fully resolved parameters next to its outputs
//! (`resolved_config.json`, or the dataset sidecar for `gen-data`) so any
//! result can be traced back to the exact invocation that produced it.
//! Exit codes: 0 success, 2 config or validation error, 3 numerical abort,
//! 4 I/O failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::channel::{
    enumerate_images, generate_dataset, read_dataset, sample_at, write_dataset, ChannelError,
    CsiTensor, Dataset, SceneSpec,
};
use crate::metrics::{
    evaluate, flop_count, predict_downlink, write_grid_csv, write_pgm16, EigSide, EvalOptions,
    EvalReport, MetricsError,
};
use crate::renderer::{RendererContext, RendererError};
use crate::sampler::{RayBundle, SamplerError};
use crate::tensor::{grad_check, TensorError};
use crate::training::{checkpoint_config, resume, split_index, train, TrainConfig, TrainError};
use crate::wirare::{InitMode, Wirare, WirareConfig, WirareError};

/// Seed fallback consulted when neither a flag nor a config file gives one.
pub const SEED_ENV: &str = "F4CKM_SEED";

/// CLI failure bucketed by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config files, or validation failures. Exit code 2.
    Config(String),
    /// NaN aborts and other numerical failures. Exit code 3.
    Numeric(String),
    /// Filesystem trouble. Exit code 4.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Numeric(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ChannelError> for CliError {
    fn from(e: ChannelError) -> Self {
        match e {
            ChannelError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<RendererError> for CliError {
    fn from(e: RendererError) -> Self {
        match e {
            RendererError::Shape(_) => CliError::Config(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<WirareError> for CliError {
    fn from(e: WirareError) -> Self {
        match e {
            WirareError::Io(io) => CliError::Io(io.to_string()),
            WirareError::Renderer(r) => r.into(),
            WirareError::Tensor(t) => t.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Io(io) => CliError::Io(io.to_string()),
            MetricsError::NonConvergent { .. } => CliError::Numeric(e.to_string()),
            MetricsError::Channel(c) => c.into(),
            MetricsError::Renderer(r) => r.into(),
            MetricsError::Wirare(w) => w.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Io(io) => CliError::Io(io.to_string()),
            TrainError::NonFinite { .. } | TrainError::NanGradient { .. } => {
                CliError::Numeric(e.to_string())
            }
            TrainError::Channel(c) => c.into(),
            TrainError::Sampler(s) => s.into(),
            TrainError::Renderer(r) => r.into(),
            TrainError::Wirare(w) => w.into(),
            TrainError::Tensor(t) => t.into(),
            TrainError::Metrics(m) => m.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "f4ckm",
    version,
    about = "Channel knowledge maps from RF radiance fields: synthesize MIMO-OFDM datasets, \
             train the field network, and predict downlink CSI from uplink measurements"
)]
pub struct Cli {
    /// Worker threads. Everything runs sequentially; values above 1 are
    /// accepted for interface compatibility and change nothing.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Synthesize a channel dataset from a scene description.
    GenData(GenDataArgs),
    /// Train the field network on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint: PSNR, SGCS, and spectral efficiency.
    Eval(EvalArgs),
    /// Emit ground-truth and predicted channel-gain maps over a room grid.
    Heatmap(HeatmapArgs),
    /// Finite-difference gradient check of the full forward pipeline.
    Gradcheck(GradcheckArgs),
    /// Parameter counts, analytic FLOPs, and measured latency per preset.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Scene description (JSON SceneSpec); omitted means the desk default.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output container path; a JSON sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Scene seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sample count override.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset container written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Training configuration (JSON TrainConfig); omitted means defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for checkpoints and the epoch log.
    #[arg(long)]
    pub out: PathBuf,
    /// Epoch budget override.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Training seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Learning rate override.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Batch size override.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Continue from this checkpoint; epoch numbering carries on and all
    /// hyperparameters come from the stored state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset container written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint written by train.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Output directory for report files.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated ESNR points in dB, or "off" for noise-free inputs.
    #[arg(long, default_value = "off")]
    pub esnr: String,
    /// SNR for the rate term, in dB.
    #[arg(long, default_value_t = 10.0)]
    pub gamma_db: f64,
    /// Gram-eigenvector side for SGCS: "right" (BS-side) or "left" (UE-side).
    #[arg(long, default_value = "right")]
    pub side: String,
    /// Dataset portion to evaluate: "test", "train", or "all".
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Noise seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also evaluate the copy-uplink baseline on the same portion.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Args, Debug)]
pub struct HeatmapArgs {
    /// Checkpoint written by train.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Scene description (JSON SceneSpec); omitted means the desk default.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Output directory for the CSV and PGM grids.
    #[arg(long)]
    pub out: PathBuf,
    /// Receiver height in meters.
    #[arg(long, default_value_t = 1.2)]
    pub height: f64,
    /// Grid spacing in meters; omitted means one downlink-center wavelength.
    #[arg(long)]
    pub spacing: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Acceptance threshold on the max relative gradient error.
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Elements probed per parameter tensor.
    #[arg(long, default_value_t = 2)]
    pub probes: usize,
    /// Seed for init, inputs, and probe positions.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Optional directory for a JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Used subcarriers per band.
    #[arg(long, default_value_t = 8)]
    pub subcarriers: usize,
    /// Receive (UE) antennas.
    #[arg(long, default_value_t = 4)]
    pub nu: usize,
    /// Transmit (BS) antennas.
    #[arg(long, default_value_t = 16)]
    pub nb: usize,
    /// Ray directions.
    #[arg(long, default_value_t = 64)]
    pub rays: usize,
    /// Radial samples per ray.
    #[arg(long, default_value_t = 32)]
    pub radiators: usize,
    /// Timed forward passes per preset (after one warmup).
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    /// Optional directory for a JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse arguments and run; the returned value is the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return 2;
    }
    let result = match cli.command {
        Cmd::GenData(a) => cmd_gen_data(&a),
        Cmd::Train(a) => cmd_train(&a),
        Cmd::Eval(a) => cmd_eval(&a),
        Cmd::Heatmap(a) => cmd_heatmap(&a),
        Cmd::Gradcheck(a) => cmd_gradcheck(&a),
        Cmd::Bench(a) => cmd_bench(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|e| CliError::Config(format!("{SEED_ENV}={s:?}: {e}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Config(format!("{SEED_ENV}: {e}"))),
    }
}

/// Flag beats an explicit config value, which beats the environment
/// fallback; the built-in default loses to all three.
fn choose_seed(flag: Option<u64>, config: Option<u64>, env: Option<u64>, default: u64) -> u64 {
    flag.or(config).or(env).unwrap_or(default)
}

/// Read a JSON config, accepting either the bare object or a
/// `resolved_config.json` wrapper holding it under "config".
fn read_config_value(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    match value {
        Value::Object(mut map) if map.contains_key("command") => map
            .remove("config")
            .ok_or_else(|| {
                CliError::Config(format!(
                    "{}: resolved-config wrapper has no \"config\" field",
                    path.display()
                ))
            }),
        other => Ok(other),
    }
}

fn write_resolved(dir: &Path, value: &Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(dir.join("resolved_config.json"), text)?;
    Ok(())
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let mut spec = match &args.config {
        Some(path) => serde_json::from_value::<SceneSpec>(read_config_value(path)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        None => SceneSpec::desk_default(),
    };
    // A config file always pins its own seed; the env fallback only steers
    // the built-in default scene.
    let config_seed = args.config.as_ref().map(|_| spec.seed);
    spec.seed = choose_seed(args.seed, config_seed, env_seed()?, spec.seed);
    if let Some(n) = args.samples {
        spec.n_samples = n;
    }
    spec.validate()?;
    let dataset = generate_dataset(&spec)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_dataset(&args.out, &dataset)?;
    println!(
        "wrote {} samples ({} subcarriers, {} x {} antennas) to {}",
        spec.n_samples,
        spec.grid.n_used,
        spec.n_u(),
        spec.n_b(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let dataset = read_dataset(&args.data)?;
    if let Some(ckpt) = &args.resume {
        let epochs = args.epochs.ok_or_else(|| {
            CliError::Config("--resume needs --epochs for the new budget".into())
        })?;
        for flag in [
            ("--config", args.config.is_some()),
            ("--seed", args.seed.is_some()),
            ("--lr", args.lr.is_some()),
            ("--batch", args.batch.is_some()),
        ] {
            if flag.1 {
                return Err(CliError::Config(format!(
                    "{} cannot be combined with --resume; hyperparameters come from the checkpoint",
                    flag.0
                )));
            }
        }
        let (_, blob) = Wirare::load(ckpt)?;
        let mut cfg = checkpoint_config(&blob)?;
        cfg.epochs = epochs;
        write_resolved(
            &args.out,
            &json!({
                "command": "train",
                "data": args.data,
                "out": args.out,
                "resume": ckpt,
                "config": cfg,
            }),
        )?;
        let records = resume(&dataset, ckpt, epochs, &args.out)?;
        report_training(&records, &args.out);
        return Ok(());
    }

    let (mut cfg, config_seed) = match &args.config {
        Some(path) => {
            let value = read_config_value(path)?;
            let explicit = value.get("seed").and_then(Value::as_u64);
            let cfg: TrainConfig = serde_json::from_value(value)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            (cfg, explicit)
        }
        None => (TrainConfig::default(), None),
    };
    cfg.seed = choose_seed(args.seed, config_seed, env_seed()?, cfg.seed);
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    if let Some(batch) = args.batch {
        cfg.batch = batch;
    }
    cfg.validate()?;
    write_resolved(
        &args.out,
        &json!({
            "command": "train",
            "data": args.data,
            "out": args.out,
            "resume": null,
            "config": cfg,
        }),
    )?;
    let records = train(&dataset, &cfg, &args.out)?;
    report_training(&records, &args.out);
    Ok(())
}

fn report_training(records: &[crate::training::EpochRecord], out: &Path) {
    if let Some(last) = records.last() {
        let best = records
            .iter()
            .map(|r| r.val_nmse)
            .fold(f64::INFINITY, f64::min);
        println!(
            "epoch {}: train NMSE {:.6}, val NMSE {:.6} (best {:.6}); checkpoints in {}",
            last.epoch,
            last.train_nmse,
            last.val_nmse,
            best,
            out.display()
        );
    }
}

fn parse_esnr(s: &str) -> Result<Option<Vec<f64>>> {
    if s.eq_ignore_ascii_case("off") {
        return Ok(None);
    }
    let mut points = Vec::new();
    for tok in s.split(',') {
        let v: f64 = tok
            .trim()
            .parse()
            .map_err(|e| CliError::Config(format!("--esnr point {tok:?}: {e}")))?;
        if !v.is_finite() {
            return Err(CliError::Config(format!(
                "--esnr point {v} must be finite"
            )));
        }
        points.push(v);
    }
    if points.is_empty() {
        return Err(CliError::Config("--esnr list is empty".into()));
    }
    Ok(Some(points))
}

fn parse_side(s: &str) -> Result<EigSide> {
    match s.to_ascii_lowercase().as_str() {
        "right" => Ok(EigSide::Right),
        "left" => Ok(EigSide::Left),
        other => Err(CliError::Config(format!(
            "--side must be \"right\" or \"left\", got {other:?}"
        ))),
    }
}

fn select_split<'a>(dataset: &'a Dataset, split: &str) -> Result<&'a [crate::channel::Sample]> {
    let n = dataset.samples.len();
    let cut = if n < 2 { n } else { split_index(n) };
    match split {
        "test" => Ok(&dataset.samples[cut..]),
        "train" => Ok(&dataset.samples[..cut]),
        "all" => Ok(&dataset.samples),
        other => Err(CliError::Config(format!(
            "--split must be \"test\", \"train\", or \"all\", got {other:?}"
        ))),
    }
}

/// Rebuild the inference stack (model, ray bundle, renderer) a checkpoint
/// was trained with, verifying it matches the scene's band plan.
fn load_inference(
    ckpt: &Path,
    spec: &SceneSpec,
) -> Result<(Wirare, TrainConfig, RayBundle, RendererContext, Vec<f64>)> {
    let (model, blob) = Wirare::load(ckpt)?;
    let cfg = checkpoint_config(&blob)?;
    let downlink = spec.grid.downlink_frequencies();
    let freqs_ghz: Vec<f64> = downlink.iter().map(|f| f / 1e9).collect();
    if model.config.freqs_ghz != freqs_ghz {
        return Err(CliError::Config(format!(
            "checkpoint was trained for {} subcarriers at {:?} GHz, scene has {} at {:?} GHz",
            model.config.freqs_ghz.len(),
            model.config.freqs_ghz,
            freqs_ghz.len(),
            freqs_ghz
        )));
    }
    let bundle = RayBundle::build(
        &spec.rx_template(),
        spec.n_b(),
        cfg.rays,
        cfg.radiators,
        cfg.range_m,
    )?;
    let ctx = RendererContext::at_frequencies(&bundle, &downlink)?;
    Ok((model, cfg, bundle, ctx, downlink))
}

fn report_point(tag: &str, report: &EvalReport, out: &Path) -> Result<Value> {
    let csv = out.join(format!("{tag}.csv"));
    let json_path = out.join(format!("{tag}.json"));
    report.write_csv(&csv)?;
    report.write_json(&json_path)?;
    let fmt = |v: Option<f64>| v.map_or("n/a".into(), |x| format!("{x:.4}"));
    println!(
        "{tag}: median PSNR {} dB, SGCS {}, SE {} b/s/Hz ({} samples)",
        fmt(report.median_psnr_db()),
        fmt(report.median_sgcs()),
        fmt(report.median_se()),
        report.psnr_db.len()
    );
    Ok(json!({
        "median_psnr_db": report.median_psnr_db(),
        "median_sgcs": report.median_sgcs(),
        "median_se_bps_hz": report.median_se(),
    }))
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let dataset = read_dataset(&args.data)?;
    let esnr = parse_esnr(&args.esnr)?;
    let side = parse_side(&args.side)?;
    let samples = select_split(&dataset, &args.split)?;
    if samples.is_empty() {
        return Err(CliError::Config(format!(
            "the \"{}\" portion of {} is empty",
            args.split,
            args.data.display()
        )));
    }
    let seed = choose_seed(args.seed, None, env_seed()?, 0);
    let (model, cfg, bundle, ctx, downlink) = load_inference(&args.ckpt, &dataset.spec)?;
    let leaves = model.leaves();
    write_resolved(
        &args.out,
        &json!({
            "command": "eval",
            "data": args.data,
            "ckpt": args.ckpt,
            "out": args.out,
            "esnr": args.esnr,
            "gamma_db": args.gamma_db,
            "side": args.side,
            "split": args.split,
            "seed": seed,
            "baseline": args.baseline,
            "train_config": cfg,
        }),
    )?;

    let opts_at = |esnr_db: Option<f64>| EvalOptions {
        gamma_db: args.gamma_db,
        side,
        seed,
        esnr_db,
    };
    let mut sweep = Vec::new();
    match &esnr {
        None => {
            let report = evaluate(&model, &leaves, &ctx, &bundle, samples, &downlink, &opts_at(None))?;
            let summary = report_point("report", &report, &args.out)?;
            sweep.push(json!({ "esnr_db": null, "summary": summary }));
            if args.baseline {
                let base = crate::metrics::baseline_report(samples, &downlink, &opts_at(None))?;
                report_point("baseline", &base, &args.out)?;
            }
        }
        Some(points) => {
            for &p in points {
                let report =
                    evaluate(&model, &leaves, &ctx, &bundle, samples, &downlink, &opts_at(Some(p)))?;
                let summary = report_point(&format!("esnr_{p}dB"), &report, &args.out)?;
                sweep.push(json!({ "esnr_db": p, "summary": summary }));
                if args.baseline {
                    let base =
                        crate::metrics::baseline_report(samples, &downlink, &opts_at(Some(p)))?;
                    report_point(&format!("baseline_esnr_{p}dB"), &base, &args.out)?;
                }
            }
        }
    }
    let mut text = serde_json::to_string_pretty(&Value::Array(sweep))?;
    text.push('\n');
    fs::write(args.out.join("sweep_summary.json"), text)?;
    Ok(())
}

/// Mean squared channel magnitude across subcarriers and antenna pairs, in
/// dB. Floored so an all-zero prediction stays finite.
fn mean_gain_db(t: &CsiTensor) -> f64 {
    let e: f64 = t.values.iter().map(|c| c.norm_sqr()).sum::<f64>() / t.values.len() as f64;
    10.0 * e.max(1e-30).log10()
}

/// Cells across a room axis at the given spacing, cell-centered.
fn grid_cells(extent: f64, spacing: f64) -> usize {
    (extent / spacing).floor() as usize
}

fn cmd_heatmap(args: &HeatmapArgs) -> Result<()> {
    let scene = match &args.scene {
        Some(path) => serde_json::from_value::<SceneSpec>(read_config_value(path)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        None => SceneSpec::desk_default(),
    };
    scene.validate()?;
    let (model, cfg, bundle, ctx, downlink) = load_inference(&args.ckpt, &scene)?;
    let leaves = model.leaves();

    let spacing = match args.spacing {
        Some(s) => s,
        None => crate::channel::SPEED_OF_LIGHT / scene.grid.downlink_center_hz(),
    };
    if !(spacing > 0.0) {
        return Err(CliError::Config(format!(
            "grid spacing must be positive, got {spacing}"
        )));
    }
    if !(args.height > 0.0 && args.height < scene.room[2]) {
        return Err(CliError::Config(format!(
            "grid outside room: height {} m is not inside (0, {}) m",
            args.height, scene.room[2]
        )));
    }
    let (nx, ny) = (grid_cells(scene.room[0], spacing), grid_cells(scene.room[1], spacing));
    if nx == 0 || ny == 0 {
        return Err(CliError::Config(format!(
            "grid outside room: spacing {spacing} m exceeds the {} x {} m floor",
            scene.room[0], scene.room[1]
        )));
    }
    write_resolved(
        &args.out,
        &json!({
            "command": "heatmap",
            "ckpt": args.ckpt,
            "out": args.out,
            "scene": scene,
            "height": args.height,
            "spacing": spacing,
            "grid": [nx, ny],
            "train_config": cfg,
        }),
    )?;

    let images = enumerate_images(scene.room, scene.tx.center, scene.max_order);
    let mut truth = Vec::with_capacity(nx * ny);
    let mut predicted = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let pos = [
                (i as f64 + 0.5) * spacing,
                (j as f64 + 0.5) * spacing,
                args.height,
            ];
            let sample = sample_at(&scene, &images, pos)?;
            truth.push(mean_gain_db(&sample.downlink));
            let pred =
                predict_downlink(&model, &leaves, &ctx, &bundle, &sample.uplink, &downlink)?;
            predicted.push(mean_gain_db(&pred));
        }
    }
    for (name, grid) in [("truth", &truth), ("predicted", &predicted)] {
        write_grid_csv(&args.out.join(format!("{name}.csv")), nx, ny, grid)?;
        write_pgm16(&args.out.join(format!("{name}.pgm")), nx, ny, grid)?;
    }
    println!(
        "wrote {nx} x {ny} gain maps at {:.4} m spacing, height {} m, to {}",
        spacing,
        args.height,
        args.out.display()
    );
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    if !(args.tol > 0.0) || !(args.step > 0.0) || args.probes == 0 {
        return Err(CliError::Config(format!(
            "tol ({}), step ({}), and probes ({}) must be positive",
            args.tol, args.step, args.probes
        )));
    }
    let seed = choose_seed(args.seed, None, env_seed()?, 0);
    // Random init at a micro scale: every branch contributes, and the whole
    // check stays under a second.
    let config = WirareConfig {
        n_c: 2,
        n_radiators: 3,
        n_h: 16,
        depth: 3,
        shaping_width: 8,
        ac_mid: 12,
        fca_hidden: 16,
        fca_enabled: true,
        freqs_ghz: vec![2.4625, 2.46375],
        init: InitMode::Random,
        seed,
    };
    let model = Wirare::new(config)?;
    let leaves = model.leaves();
    let rx = crate::channel::ArrayGeometry::new(
        1,
        2,
        0.062,
        [0.0; 3],
        crate::channel::ArrayPlane::Xy,
    )?;
    let bundle = RayBundle::build(&rx, 2, 2, 3, 4.0)?;
    let freqs_hz: Vec<f64> = [2.4625e9, 2.46375e9].to_vec();
    let ctx = RendererContext::at_frequencies(&bundle, &freqs_hz)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    let mut draw = |n: usize| -> Vec<Complex64> {
        (0..n)
            .map(|_| Complex64::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0))
            .collect()
    };
    let uplink = CsiTensor::new(freqs_hz.clone(), 2, 2, draw(8))?;
    let target = CsiTensor::new(freqs_hz.clone(), 2, 2, draw(8))?;

    let report = grad_check(
        |inputs| {
            let wrap = |msg: String| TensorError::Invalid {
                op: "forward_nmse",
                msg,
            };
            let field = model
                .forward(inputs, &uplink, &bundle)
                .map_err(|e| wrap(e.to_string()))?;
            let pred = ctx.aggregate(&field).map_err(|e| wrap(e.to_string()))?;
            crate::training::nmse_sample(&pred, &target).map_err(|e| wrap(e.to_string()))
        },
        &leaves,
        args.step,
        args.probes,
        seed,
    )?;

    let entries = model.entries();
    for leaf in &report.leaves {
        println!(
            "{:<24} probes {:>2}  max rel err {:.3e}",
            entries[leaf.leaf].name, leaf.elements_checked, leaf.max_rel_err
        );
    }
    let pass = report.passes(args.tol);
    println!(
        "max relative error {:.3e} (tolerance {:.1e}): {}",
        report.max_rel_err,
        args.tol,
        if pass { "PASS" } else { "FAIL" }
    );
    if let Some(out) = &args.out {
        write_resolved(
            out,
            &json!({
                "command": "gradcheck",
                "tol": args.tol,
                "step": args.step,
                "probes": args.probes,
                "seed": seed,
                "out": out,
            }),
        )?;
        let leaves_json: Vec<Value> = report
            .leaves
            .iter()
            .map(|l| {
                json!({
                    "name": entries[l.leaf].name,
                    "probes": l.elements_checked,
                    "max_rel_err": l.max_rel_err,
                })
            })
            .collect();
        let mut text = serde_json::to_string_pretty(&json!({
            "max_rel_err": report.max_rel_err,
            "tol": args.tol,
            "pass": pass,
            "leaves": leaves_json,
        }))?;
        text.push('\n');
        fs::write(out.join("gradcheck.json"), text)?;
    }
    if pass {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: max relative error {:.3e} exceeds {:.1e}",
            report.max_rel_err, args.tol
        )))
    }
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    if args.subcarriers == 0 || args.nu == 0 || args.nb == 0 || args.rays == 0 || args.radiators == 0
    {
        return Err(CliError::Config(
            "subcarriers, nu, nb, rays, and radiators must all be positive".into(),
        ));
    }
    if args.reps == 0 {
        return Err(CliError::Config("--reps must be at least 1".into()));
    }
    let center_ghz = 2.465;
    let spacing_ghz = 1.25e-3;
    let freqs_ghz: Vec<f64> = (0..args.subcarriers)
        .map(|k| center_ghz + (k as f64 - (args.subcarriers as f64 - 1.0) / 2.0) * spacing_ghz)
        .collect();
    let freqs_hz: Vec<f64> = freqs_ghz.iter().map(|f| f * 1e9).collect();
    let rx = crate::channel::ArrayGeometry::new(
        1,
        args.nu,
        0.062,
        [0.0; 3],
        crate::channel::ArrayPlane::Xy,
    )?;
    let bundle = RayBundle::build(&rx, args.nb, args.rays, args.radiators, 9.0)?;
    let ctx = RendererContext::at_frequencies(&bundle, &freqs_hz)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6265_6e63);
    let values: Vec<Complex64> = (0..args.subcarriers * args.nu * args.nb)
        .map(|_| Complex64::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0))
        .collect();
    let uplink = CsiTensor::new(freqs_hz.clone(), args.nu, args.nb, values)?;

    println!(
        "{:<6} {:>12} {:>16} {:>12}",
        "model", "params", "flops", "latency_ms"
    );
    let mut rows = Vec::new();
    for (name, config) in [
        ("full", WirareConfig::full(freqs_ghz.clone(), args.radiators, 0)),
        ("lite", WirareConfig::lite(freqs_ghz.clone(), args.radiators, 0)),
    ] {
        let model = Wirare::new(config)?;
        let leaves = model.leaves();
        let flops = flop_count(&model, args.rays, args.nu, args.nb);
        let params = model.param_count();
        predict_downlink(&model, &leaves, &ctx, &bundle, &uplink, &freqs_hz)?;
        let mut timings = Vec::with_capacity(args.reps);
        for _ in 0..args.reps {
            let t = Instant::now();
            predict_downlink(&model, &leaves, &ctx, &bundle, &uplink, &freqs_hz)?;
            timings.push(t.elapsed().as_secs_f64() * 1e3);
        }
        timings.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
        let latency_ms = timings[timings.len() / 2];
        println!("{name:<6} {params:>12} {flops:>16} {latency_ms:>12.2}");
        rows.push(json!({
            "model": name,
            "params": params,
            "flops": flops,
            "latency_ms": latency_ms,
        }));
    }
    if let Some(out) = &args.out {
        write_resolved(
            out,
            &json!({
                "command": "bench",
                "subcarriers": args.subcarriers,
                "nu": args.nu,
                "nb": args.nb,
                "rays": args.rays,
                "radiators": args.radiators,
                "reps": args.reps,
                "out": out,
            }),
        )?;
        let mut text = serde_json::to_string_pretty(&Value::Array(rows))?;
        text.push('\n');
        fs::write(out.join("bench.json"), text)?;
    }
    Ok(())
}
