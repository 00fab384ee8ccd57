//! `genclean` command-line front end.
//!
//! Settings resolve as: flag given on the command line, else the `--config`
//! JSON document, else the built-in default shown in `--help`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use genclean_core::config::RunConfig;
use genclean_core::detector::ScoreMetric;
use genclean_core::stream::Pace;

/// Exit status for usage errors.
const EXIT_USAGE: u8 = 1;
/// Exit status for unreadable, malformed or inconsistent inputs.
const EXIT_DATA: u8 = 2;
/// Exit status for numeric failures such as a flagged posterior collapse.
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "genclean", version, about = "Label-free artifact detection and cleaning for pulsatile waveforms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic multi-patient benchmark.
    Synth(SynthArgs),
    /// Train a detector on a benchmark and calibrate its threshold.
    Train(TrainArgs),
    /// Recalibrate a checkpoint's threshold on a benchmark's validation split.
    Calibrate(CalibrateArgs),
    /// Mask artifact windows of a recording as NaN.
    Clean(CleanArgs),
    /// Score a checkpoint on a benchmark's test split.
    Eval(EvalArgs),
    /// Count hypertensive pulses before and after cleaning.
    Events(EventsArgs),
    /// Train one model per patient and cross-evaluate against a pooled model.
    Matrix(MatrixArgs),
    /// Replay a recording through the detector window by window.
    Stream(StreamArgs),
    /// Accuracy and timing of one detector across sample rates.
    FreqSweep(FreqSweepArgs),
    /// F1 across latent sizes and score metrics.
    LatentSweep(LatentSweepArgs),
    /// Write per-segment latent vectors as JSON lines.
    DumpLatent(DumpLatentArgs),
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// JSON run configuration; flags given on the command line take precedence.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    patients: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    train_per_patient: usize,
    #[arg(long, default_value_t = 40)]
    val_per_patient: usize,
    #[arg(long, default_value_t = 100)]
    test_per_patient: usize,
    /// Probability that a training or validation window carries an artifact.
    #[arg(long, default_value_t = 0.12)]
    artifact_fraction: f64,
    #[arg(long, default_value_t = 120.0)]
    fs: f64,
}

#[derive(Args, Debug)]
struct TrainOpts {
    /// Maximum training epochs.
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    /// Epochs without validation improvement before stopping; capped at --epochs.
    #[arg(long, default_value_t = 50)]
    patience: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Seed for weight initialization, shuffling and noise.
    #[arg(long, default_value_t = 0)]
    train_seed: u64,
    #[arg(long, default_value_t = 20)]
    latent_dim: usize,
}

#[derive(Args, Debug)]
struct DetectorOpts {
    /// Reconstruction score: mse or mae.
    #[arg(long, value_parser = parse_metric, default_value = "mse")]
    metric: ScoreMetric,
    /// Validation percentile used as the artifact threshold.
    #[arg(long, default_value_t = 90.0)]
    percentile: f64,
    /// Per-segment standardization before the model.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    revin: bool,
    /// Resample inputs to the model rate.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    freq_adapter: bool,
    /// Range and morphology rules ahead of the model.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    heuristics: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Benchmark directory written by `synth`.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Training report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Exit with status 3 when the posterior-collapse guard fires.
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    train: TrainOpts,
    #[command(flatten)]
    detector: DetectorOpts,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Recalibrated checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_metric, default_value = "mse")]
    metric: ScoreMetric,
    #[arg(long, default_value_t = 90.0)]
    percentile: f64,
}

#[derive(Args, Debug)]
struct CleanArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Recording to clean (`.csv` or `.f32` with sidecar).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Cleaned recording; format follows the extension.
    #[arg(long)]
    out: PathBuf,
    /// Per-window verdicts as JSON lines.
    #[arg(long)]
    verdicts: Option<PathBuf>,
    /// Decoded waveform as raw f32, NaN past the last judged window.
    #[arg(long)]
    emit_decoded: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluation JSON; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EventsArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Raw recording.
    #[arg(long)]
    raw: PathBuf,
    /// Cleaned recording; computed with --checkpoint when absent.
    #[arg(long, required_unless_present = "checkpoint")]
    cleaned: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 140.0)]
    sbp_limit: f64,
    #[arg(long, default_value_t = 90.0)]
    dbp_limit: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MatrixArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: PathBuf,
    /// Pooled detector for the last column.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Accuracy table with row and column headers.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    train: TrainOpts,
}

#[derive(Args, Debug)]
struct StreamArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// realtime releases samples at the recording's rate; unpaced as fast as possible.
    #[arg(long, value_parser = parse_pace, default_value = "unpaced")]
    pace: Pace,
    /// Verdicts as JSON lines.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FreqSweepArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "50,75,100,120,125,150,175,200,240")]
    rates: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LatentSweepArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,40,80")]
    dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_metric, default_value = "mse,mae")]
    metrics: Vec<ScoreMetric>,
    #[command(flatten)]
    train: TrainOpts,
}

#[derive(Args, Debug)]
struct DumpLatentArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Benchmark directory; every segment of every split is dumped.
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    data: Option<PathBuf>,
    /// Single recording, cut into consecutive windows.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_metric(s: &str) -> Result<ScoreMetric, String> {
    s.parse().map_err(|e: genclean_core::Error| e.to_string())
}

fn parse_pace(s: &str) -> Result<Pace, String> {
    s.parse().map_err(|e: genclean_core::Error| e.to_string())
}

/// True when `id` was set explicitly on the command line.
fn given(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

fn load_config(arg: &ConfigArg) -> anyhow::Result<RunConfig> {
    match &arg.config {
        Some(path) => Ok(RunConfig::load(path)?),
        None => Ok(RunConfig::default()),
    }
}

impl TrainOpts {
    fn apply(&self, m: &ArgMatches, cfg: &mut RunConfig) {
        if given(m, "epochs") {
            cfg.train.max_epochs = self.epochs;
        }
        if given(m, "patience") {
            cfg.train.patience = self.patience;
        }
        cfg.train.patience = cfg.train.patience.min(cfg.train.max_epochs);
        if given(m, "lr") {
            cfg.train.lr = self.lr;
        }
        if given(m, "batch_size") {
            cfg.train.batch_size = self.batch_size;
        }
        if given(m, "train_seed") {
            cfg.train.seed = self.train_seed;
        }
        if given(m, "latent_dim") {
            cfg.architecture.latent_dim = self.latent_dim;
        }
    }
}

impl DetectorOpts {
    fn apply(&self, m: &ArgMatches, cfg: &mut RunConfig) {
        if given(m, "metric") {
            cfg.detector.score_metric = self.metric;
        }
        if given(m, "percentile") {
            cfg.detector.threshold_percentile = self.percentile;
        }
        if given(m, "revin") {
            cfg.detector.enable_revin = self.revin;
        }
        if given(m, "freq_adapter") {
            cfg.detector.enable_freq_adapter = self.freq_adapter;
        }
        if given(m, "heuristics") {
            cfg.detector.enable_heuristics = self.heuristics;
        }
    }
}

/// A failure that maps to a specific exit status.
#[derive(Debug)]
struct Exit {
    code: u8,
    message: String,
}

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Exit {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<Exit>() {
        return e.code;
    }
    match err.chain().find_map(|e| e.downcast_ref::<genclean_core::Error>()) {
        Some(genclean_core::Error::Numeric(_)) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// The error chain joined by ": ", skipping links whose text the previous
/// link already ends with.
fn describe(err: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if parts.last().is_some_and(|p| p.ends_with(&text)) {
            continue;
        }
        parts.push(text);
    }
    parts.join(": ")
}

fn subcommand_name(command: &Command) -> &'static str {
    match command {
        Command::Synth(_) => "synth",
        Command::Train(_) => "train",
        Command::Calibrate(_) => "calibrate",
        Command::Clean(_) => "clean",
        Command::Eval(_) => "eval",
        Command::Events(_) => "events",
        Command::Matrix(_) => "matrix",
        Command::Stream(_) => "stream",
        Command::FreqSweep(_) => "freq-sweep",
        Command::LatentSweep(_) => "latent-sweep",
        Command::DumpLatent(_) => "dump-latent",
    }
}

fn main() -> ExitCode {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand is required");
    let name = subcommand_name(&cli.command);
    match commands::run(cli.command, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("genclean {name}: {}", describe(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}
