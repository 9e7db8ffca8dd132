//! `tlsprep`: build signal-level pseudo labels from close-talk/far-field
//! recordings and inspect the individual stages.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tlsprep_core::pipeline::load_kv_config;
use tlsprep_core::synth::{simulate_corpus, SimulationSpec};
use tlsprep_core::{
    gcc_phat, iam_target, magnitude, mca_grad, mca_loss, read_wav, run_manifest_file, stft, Error,
    GccPhatOptions, Grid, MagnitudeSpectrogram, NoiseKind, PipelineConfig, RunSummary, StftConfig,
    WavEncoding, WeightSource, WindowKind,
};

/// Environment variable holding the default worker count for `run`.
const WORKERS_ENV: &str = "TLSPREP_WORKERS";

#[derive(Debug, Parser)]
#[command(
    name = "tlsprep",
    version,
    about = "Signal-level pseudo labels for far-field speech enhancement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run time alignment, level alignment and SNR filtering over a manifest.
    Run(RunArgs),
    /// Write a synthetic corpus with ground truth.
    Simulate(SimulateArgs),
    /// Print the SNR of a pseudo label against its far-field reference.
    Snr(SnrArgs),
    /// Print GCC-PHAT alignment diagnostics for two recordings.
    Align(AlignArgs),
    /// Print the MSE, cosine and combined loss of two magnitude grids.
    Mca(McaArgs),
    /// Write an ideal amplitude mask target grid.
    Iam(IamArgs),
    /// Write the STFT magnitude of a WAV file as a grid.
    Magspec(MagspecArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Input segment manifest (JSONL).
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory; receives results.jsonl and labels/.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads [default: $TLSPREP_WORKERS or 1].
    #[arg(long)]
    workers: Option<usize>,
    /// Keep segments whose SNR is at or above this value (dB).
    #[arg(long, allow_negative_numbers = true)]
    threshold_db: Option<f64>,
    /// Time alignment search range in seconds.
    #[arg(long)]
    max_lag_s: Option<f64>,
    /// Level alignment weighting: uniform, target or predictor.
    #[arg(long)]
    weight_source: Option<WeightSource>,
    /// Output encoding: pcm16, pcm24, pcm32 or float32.
    #[arg(long)]
    encoding: Option<WavEncoding>,
    /// Directory for resolving relative manifest paths.
    #[arg(long)]
    input_root: Option<PathBuf>,
    /// Extra `key=value` setting, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    snr_min: f64,
    #[arg(long, default_value_t = 20.0, allow_negative_numbers = true)]
    snr_max: f64,
    /// Upper bound of the reverb tail decay; 0 for anechoic only.
    #[arg(long, default_value_t = 50.0)]
    max_decay_ms: f64,
    /// Direct-to-reverberant ratio of the tails.
    #[arg(long)]
    drr_db: Option<f64>,
    /// Noise colour: white or pink.
    #[arg(long, default_value = "white")]
    noise: NoiseKind,
    /// Utterance length in seconds.
    #[arg(long, default_value_t = 3.0)]
    segment_s: f64,
    /// Largest far-field delay in samples.
    #[arg(long, default_value_t = 4000)]
    max_delay: usize,
}

#[derive(Debug, Args)]
struct SnrArgs {
    /// Pseudo label.
    label: PathBuf,
    /// Far-field reference.
    reference: PathBuf,
}

#[derive(Debug, Args)]
struct AlignArgs {
    /// Close-talk recording.
    close_talk: PathBuf,
    /// Far-field recording.
    farfield: PathBuf,
    /// Search range in seconds.
    #[arg(long, default_value_t = 0.5)]
    max_lag_s: f64,
    /// Also print a sub-sample refinement of the offset.
    #[arg(long)]
    interpolate: bool,
}

#[derive(Debug, Args)]
struct McaArgs {
    /// Reference magnitude grid.
    target: PathBuf,
    /// Estimated magnitude grid.
    estimate: PathBuf,
    /// Weight of the cosine term.
    #[arg(long, default_value_t = tlsprep_core::loss::DEFAULT_ALPHA)]
    alpha: f64,
    /// Write the gradient with respect to the estimate to this grid file.
    #[arg(long)]
    grad: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StftArgs {
    #[arg(long, default_value_t = 512)]
    n_fft: usize,
    #[arg(long, default_value_t = 256)]
    hop: usize,
    /// Analysis window: sqrt_hann or hann.
    #[arg(long, default_value = "sqrt_hann")]
    window: WindowKind,
}

#[derive(Debug, Args)]
struct IamArgs {
    /// Clean or pseudo-label WAV.
    #[arg(long)]
    clean: PathBuf,
    /// Mixture WAV.
    #[arg(long)]
    mix: PathBuf,
    /// Output mask grid.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = tlsprep_core::loss::DEFAULT_IAM_CLIP)]
    clip_max: f64,
    #[command(flatten)]
    stft: StftArgs,
}

#[derive(Debug, Args)]
struct MagspecArgs {
    input: PathBuf,
    /// Output grid.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    stft: StftArgs,
}

/// Failure of a subcommand, split by exit code.
enum Failure {
    Usage(String),
    Batch(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Usage(msg),
            other => Failure::Batch(other),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Snr(a) => cmd_snr(a),
        Command::Align(a) => cmd_align(a),
        Command::Mca(a) => cmd_mca(a),
        Command::Iam(a) => cmd_iam(a),
        Command::Magspec(a) => cmd_magspec(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Batch(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Defaults, then the worker env var, then the config file, then flags.
fn build_config(args: &RunArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = PipelineConfig::default();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        cfg.set("worker_count", &v)
            .map_err(|_| Failure::Usage(format!("{WORKERS_ENV}: bad worker count `{v}`")))?;
    }
    if let Some(path) = &args.config {
        for (k, v) in load_kv_config(path).map_err(usage)? {
            cfg.set(&k, &v).map_err(usage)?;
        }
    }
    for kv in &args.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim()).map_err(usage)?;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(w) = args.workers {
        cfg.worker_count = w;
    }
    if let Some(t) = args.threshold_db {
        cfg.snr_threshold_db = t;
    }
    if let Some(l) = args.max_lag_s {
        cfg.max_lag_s = l;
    }
    if let Some(w) = args.weight_source {
        cfg.mflf.weight_source = w;
    }
    if let Some(e) = args.encoding {
        cfg.encoding = e;
    }
    if let Some(r) = &args.input_root {
        cfg.input_root = Some(r.clone());
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> CmdResult {
    let cfg = build_config(&args)?;
    let (out, records) = run_manifest_file(&args.manifest, &cfg).map_err(Failure::Batch)?;
    let s = RunSummary::of(&records);
    log::info!(
        "{} segments: {} kept, {} discarded, {} failed",
        s.total,
        s.kept,
        s.discarded,
        s.failed
    );
    println!("{}", out.display());
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> CmdResult {
    let defaults = SimulationSpec::default();
    let spec = SimulationSpec {
        count: args.count,
        seed: args.seed,
        segment_s: args.segment_s,
        max_delay: args.max_delay,
        snr_range_db: (args.snr_min, args.snr_max),
        max_decay_ms: args.max_decay_ms,
        drr_db: args.drr_db.unwrap_or(defaults.drr_db),
        noise_kind: args.noise,
        ..defaults
    };
    if !(spec.snr_range_db.0 <= spec.snr_range_db.1) {
        return Err(Failure::Usage("--snr-min exceeds --snr-max".into()));
    }
    if !(spec.segment_s > 0.0) || spec.max_decay_ms < 0.0 {
        return Err(Failure::Usage(
            "--segment-s must be positive and --max-decay-ms nonnegative".into(),
        ));
    }
    let corpus = simulate_corpus(&args.out, &spec).map_err(Failure::Batch)?;
    log::info!(
        "wrote {} scenarios, truth in {}",
        corpus.segments.len(),
        corpus.truth_path.display()
    );
    println!("{}", corpus.manifest_path.display());
    Ok(())
}

fn mono(path: &Path) -> Result<(Vec<f64>, u32), Failure> {
    let clip = read_wav(path)?;
    if clip.n_channels() > 1 {
        log::warn!(
            "{}: using the first of {} channels",
            path.display(),
            clip.n_channels()
        );
    }
    let rate = clip.sample_rate();
    Ok((clip.into_mono(), rate))
}

fn same_rate(a: u32, b: u32) -> CmdResult {
    if a != b {
        return Err(Error::RateMismatch {
            expected: a,
            actual: b,
        }
        .into());
    }
    Ok(())
}

fn cmd_snr(args: SnrArgs) -> CmdResult {
    let (s3, ra) = mono(&args.label)?;
    let (y, rb) = mono(&args.reference)?;
    same_rate(ra, rb)?;
    let snr = tlsprep_core::estimate_snr(&s3, &y)?;
    println!("{}", format_db(snr));
    Ok(())
}

fn format_db(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.4}")
    }
}

fn cmd_align(args: AlignArgs) -> CmdResult {
    let (s1, ra) = mono(&args.close_talk)?;
    let (y, rb) = mono(&args.farfield)?;
    same_rate(ra, rb)?;
    if !(args.max_lag_s >= 0.0) {
        return Err(Failure::Usage("--max-lag-s must be nonnegative".into()));
    }
    let opts = GccPhatOptions {
        interpolate: args.interpolate,
        ..GccPhatOptions::with_max_lag((args.max_lag_s * ra as f64).round() as usize)
    };
    let r = gcc_phat(&s1, &y, &opts)?;
    println!("offset_samples\t{}", r.offset_samples);
    println!("offset_s\t{:.6}", r.offset_samples as f64 / ra as f64);
    println!("peak_value\t{:.6}", r.peak_value);
    println!("peak_ratio\t{:.4}", r.peak_ratio);
    if let Some(f) = r.refined_offset {
        println!("refined_offset\t{f:.4}");
    }
    Ok(())
}

fn read_magnitude(path: &Path) -> Result<MagnitudeSpectrogram, Failure> {
    Ok(Grid::read(path)?.into_magnitude()?)
}

fn cmd_mca(args: McaArgs) -> CmdResult {
    let a = read_magnitude(&args.target)?;
    let b = read_magnitude(&args.estimate)?;
    let r = mca_loss(&a, &b, args.alpha)?;
    println!("mse\t{}", r.mse);
    println!("cossim_loss\t{}", r.cossim_loss);
    println!("mca\t{}", r.mca);
    if let Some(path) = &args.grad {
        mca_grad(&a, &b, args.alpha)?.write(path)?;
    }
    Ok(())
}

fn magspec(path: &Path, args: &StftArgs) -> Result<MagnitudeSpectrogram, Failure> {
    let (x, rate) = mono(path)?;
    let cfg = StftConfig::new(args.n_fft, args.hop, args.window, rate).map_err(usage)?;
    Ok(magnitude(&stft(&x, rate, &cfg)?))
}

fn cmd_iam(args: IamArgs) -> CmdResult {
    let s = magspec(&args.clean, &args.stft)?;
    let y = magspec(&args.mix, &args.stft)?;
    iam_target(&s, &y, args.clip_max)?.write(&args.out)?;
    Ok(())
}

fn cmd_magspec(args: MagspecArgs) -> CmdResult {
    Grid::from(&magspec(&args.input, &args.stft)?).write(&args.out)?;
    Ok(())
}
