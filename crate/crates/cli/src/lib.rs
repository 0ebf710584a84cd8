//! Command-line driver: `stemgan [-c run.toml] [--section.key=value ...] <command>...`

pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use log::{info, warn};
use stemgan::data_io::{build_manifest, DatasetManifest};
use stemgan::evalkit::{build_report, MetricsReport, Scope};
use stemgan::pipeline::{throughput_benchmark, write_benchmark_csv, LoaderConfig, WindowSpec};
use stemgan::scoring::{load_scores, save_scores, score_manifest};
use stemgan::synth::generate_synthetic;
use stemgan::trainer::{
    config_hash, training_windows, transfer_init, write_metrics_csv, write_steps_csv, Checkpoint, StopReason,
    Trainer,
};
use stemgan::Scalar;

pub use config::{Precision, RunConfig};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const DEVICE_VAR: &str = "STEMGAN_DEVICE";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(stemgan::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<stemgan::Error> for CliError {
    fn from(e: stemgan::Error) -> Self {
        match e {
            stemgan::Error::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Scan the dataset root and write the manifest.
    Prepare,
    /// Train on the manifest's training clips.
    Train,
    /// Write per-frame scores for every test clip.
    Score,
    /// Compute AUROC, EER and score gaps from saved scores.
    Evaluate,
    /// Measure loader throughput for each loader option set.
    BenchIo,
    /// Generate the moving-square dataset and its manifest.
    Synth,
    /// Like evaluate, plus ROC and timeline plots.
    Report,
}

#[derive(Debug, Parser)]
#[command(
    name = "stemgan",
    version,
    about = "Future-frame prediction GAN for video anomaly detection",
    after_help = "Any config key can be overridden with --section.key=value, e.g. --train.max_epochs=10."
)]
struct Cli {
    /// TOML run configuration.
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Commands to run in order.
    #[arg(required = true, value_enum)]
    commands: Vec<Command>,
}

/// Splits `--a.b=v` / `--a.b v` overrides from the remaining arguments.
pub fn split_overrides(args: &[OsString]) -> Result<(Vec<OsString>, Vec<(String, String)>), CliError> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(s) = arg.to_str().and_then(|s| s.strip_prefix("--")) else {
            rest.push(arg.clone());
            continue;
        };
        let (key, value) = match s.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (s, None),
        };
        if !key.contains('.') {
            rest.push(arg.clone());
            continue;
        }
        let value = match value {
            Some(v) => v,
            None => it
                .next()
                .and_then(|v| v.to_str().map(str::to_string))
                .ok_or_else(|| CliError::Usage(format!("override --{key} needs a value")))?,
        };
        overrides.push((key.to_string(), value));
    }
    Ok((rest, overrides))
}

/// Compute device; only the CPU backend exists, so anything else falls back.
pub fn select_device() -> &'static str {
    match std::env::var(DEVICE_VAR) {
        Ok(v) if !v.is_empty() && !v.eq_ignore_ascii_case("cpu") => {
            warn!("{DEVICE_VAR}={v} is not available; falling back to cpu");
            "cpu"
        }
        _ => "cpu",
    }
}

/// Parses `args` (including the program name) and runs every command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let (rest, overrides) = match split_overrides(&args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("stemgan: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = RunConfig::load(cli.config.as_deref(), &overrides).and_then(|cfg| execute(&cfg, &cli.commands));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("stemgan: {e}");
            e.exit_code()
        }
    }
}

/// Runs `commands` in order against one resolved configuration.
pub fn execute(cfg: &RunConfig, commands: &[Command]) -> Result<(), CliError> {
    let resolved = cfg.write_resolved()?;
    info!("configuration written to {}", resolved.display());
    let device = select_device();
    info!("device: {device}");
    for &cmd in commands {
        info!("running {cmd:?}");
        match cmd {
            Command::Synth => synth(cfg)?,
            Command::Prepare => prepare(cfg)?,
            Command::Train => match cfg.model.precision {
                Precision::F32 => train::<f32>(cfg)?,
                Precision::F64 => train::<f64>(cfg)?,
            },
            Command::Score => match cfg.model.precision {
                Precision::F32 => score::<f32>(cfg)?,
                Precision::F64 => score::<f64>(cfg)?,
            },
            Command::Evaluate => {
                evaluate(cfg, false)?;
            }
            Command::Report => {
                evaluate(cfg, true)?;
            }
            Command::BenchIo => bench_io(cfg)?,
        }
    }
    Ok(())
}

fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let manifest = generate_synthetic(&cfg.dataset.root, &cfg.synth)?;
    save_manifest(cfg, &manifest)
}

fn prepare(cfg: &RunConfig) -> Result<(), CliError> {
    let manifest = build_manifest(&cfg.dataset.root, &cfg.dataset_spec()?)?;
    save_manifest(cfg, &manifest)
}

fn save_manifest(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<(), CliError> {
    let path = cfg.manifest_path();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| stemgan::Error::io(dir, e))?;
    }
    manifest.save_csv(&path)?;
    info!("{} clips written to {}", manifest.clips.len(), path.display());
    Ok(())
}

fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest, CliError> {
    let path = cfg.manifest_path();
    if !path.exists() {
        return Err(CliError::Runtime(stemgan::Error::Validation(format!(
            "manifest {} not found; run prepare or synth first",
            path.display()
        ))));
    }
    Ok(DatasetManifest::load_csv(&path, &cfg.dataset_spec()?.name)?)
}

fn train<T: Scalar>(cfg: &RunConfig) -> Result<(), CliError> {
    let manifest = load_manifest(cfg)?;
    let model = cfg.model_config();
    let windows = training_windows::<T>(&manifest, &model, cfg.dataset.stride)?;
    info!("{} training windows", windows.len());
    let mut trainer = match &cfg.transfer.base {
        Some(base) => {
            let base = Checkpoint::<T>::load(base)?;
            transfer_init(&base, model, cfg.train.clone(), cfg.loss_weights(), cfg.transfer.learning_rate)?
        }
        None => Trainer::new(model, cfg.train.clone(), cfg.loss_weights())?,
    };
    let outcome = trainer.fit_windows(&windows, |m| {
        info!(
            "epoch {}: g_loss {:.5} d_loss {:.5} d_fake {:.3} mse {:.6}",
            m.epoch, m.g_loss, m.d_loss, m.d_score_fake, m.train_mse
        );
        ControlFlow::Continue(())
    })?;
    let out = &cfg.output;
    outcome.best.save(&out.checkpoint_dir())?;
    outcome.last.save(&out.last_checkpoint_dir())?;
    write_metrics_csv(&out.dir.join("train_metrics.csv"), &outcome.history)?;
    write_steps_csv(&out.dir.join("train_steps.csv"), &outcome.history)?;
    info!("stopped: {:?}", outcome.stop);
    if let StopReason::Diverged(why) = outcome.stop {
        return Err(CliError::Runtime(stemgan::Error::NonFinite {
            stage: "training".into(),
            detail: format!("{why}; last good checkpoint kept in {}", out.checkpoint_dir().display()),
        }));
    }
    Ok(())
}

fn score<T: Scalar>(cfg: &RunConfig) -> Result<(), CliError> {
    let manifest = load_manifest(cfg)?;
    let dir = cfg.output.checkpoint_dir();
    let mut ckpt = Checkpoint::<T>::load(&dir)?;
    if ckpt.model != cfg.model_config() {
        warn!("scoring with the model configuration stored in {}", dir.display());
    }
    let series = score_manifest(
        &mut ckpt.generator,
        &mut ckpt.discriminator,
        &manifest,
        ckpt.model.frame_size,
        ckpt.model.window_total,
        cfg.loss.lambda_d,
    )?;
    save_scores(&cfg.output.scores_dir(), &series)?;
    info!("scored {} clips into {}", series.len(), cfg.output.scores_dir().display());
    Ok(())
}

fn evaluate(cfg: &RunConfig, plots: bool) -> Result<MetricsReport, CliError> {
    let series = load_scores(&cfg.output.scores_dir())?;
    let hash = config_hash(&cfg.model_config(), &cfg.train, &cfg.loss_weights());
    let name = cfg.dataset_spec()?.name;
    let report = build_report(&series, &cfg.output.report_dir(), &name, &hash, plots)?;
    if let Some(m) = report.row(Scope::Micro) {
        println!(
            "{name}: AUROC {:.4} EER {:.4} score gap {:.4} ({} frames, {} abnormal)",
            m.auroc.unwrap_or(f64::NAN),
            m.eer.unwrap_or(f64::NAN),
            m.score_gap.unwrap_or(f64::NAN),
            m.n_frames,
            m.n_abnormal
        );
    }
    Ok(report)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// The four loader option sets in the order they are enabled.
pub fn bench_configs(base: &LoaderConfig) -> Vec<LoaderConfig> {
    [(false, false, false), (true, false, false), (true, true, false), (true, true, true)]
        .into_iter()
        .map(|(c, p, par)| LoaderConfig {
            caching: c,
            prefetching: p,
            parallelizing: par,
            ..base.clone()
        })
        .collect()
}

fn bench_io(cfg: &RunConfig) -> Result<(), CliError> {
    let manifest = load_manifest(cfg)?;
    let spec = WindowSpec {
        frame_size: cfg.model.frame_size,
        window_total: cfg.dataset.window,
        stride: cfg.dataset.stride,
    };
    let mut rows = Vec::new();
    for loader in bench_configs(&cfg.bench.loader) {
        let runs = (0..cfg.bench.runs)
            .map(|_| throughput_benchmark::<f32>(&manifest.clips, &loader, spec, cfg.bench.duration_secs))
            .collect::<stemgan::Result<Vec<_>>>()?;
        let fps = median(runs);
        println!(
            "caching={} prefetching={} parallelizing={}: {fps:.1} windows/s",
            loader.caching, loader.prefetching, loader.parallelizing
        );
        rows.push((loader, fps));
    }
    let path = cfg.output.dir.join("bench_io.csv");
    write_benchmark_csv(&path, &rows)?;
    info!("throughput written to {}", path.display());
    Ok(())
}

/// Default location of the resolved configuration for `cfg`.
pub fn resolved_config_path(cfg: &RunConfig) -> PathBuf {
    cfg.output.dir.join("resolved_config.txt")
}

/// Reads a TOML config from disk with no overrides.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    RunConfig::load(Some(path), &[])
}
