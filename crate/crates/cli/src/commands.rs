use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ArgMatches;
use genclean_core::config::RunConfig;
use genclean_core::detector::{self, clean_signal, usable_segments, CalibratedDetector, VerdictRecord};
use genclean_core::eval::{evaluate, generalisation_matrix, Confusion, Metrics};
use genclean_core::events::event_reduction_report;
use genclean_core::signal::{read_signal, segment_signal, write_signal, Label, Segment, Signal, SignalFormat, Split};
use genclean_core::stream::{estimate_flops, frequency_sweep, run_stream};
use genclean_core::synth::{make_benchmark, read_benchmark, write_benchmark, Benchmark};
use genclean_core::vae::load_checkpoint;
use genclean_core::Detector;
use serde::Serialize;

use crate::{given, load_config, Command, Exit, EXIT_NUMERIC};

pub fn run(command: Command, m: &ArgMatches) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a, m),
        Command::Train(a) => train(a, m),
        Command::Calibrate(a) => calibrate(a, m),
        Command::Clean(a) => clean(a),
        Command::Eval(a) => eval(a),
        Command::Events(a) => events(a, m),
        Command::Matrix(a) => matrix(a, m),
        Command::Stream(a) => stream(a, m),
        Command::FreqSweep(a) => freq_sweep(a, m),
        Command::LatentSweep(a) => latent_sweep(a, m),
        Command::DumpLatent(a) => dump_latent(a),
    }
}

fn format_of(path: &Path) -> Result<SignalFormat> {
    SignalFormat::from_path(path)
        .with_context(|| format!("{}: unknown signal format, expected a .csv or .f32 extension", path.display()))
}

fn read_input(path: &Path) -> Result<Signal> {
    let format = format_of(path)?;
    read_signal(path, format).with_context(|| format!("reading {}", path.display()))
}

fn load_bench(dir: &Path) -> Result<Benchmark> {
    read_benchmark(dir).with_context(|| format!("--data {}", dir.display()))
}

fn load_detector(path: &Path, cfg: &RunConfig) -> Result<Detector> {
    CalibratedDetector::load(path, cfg.detector).with_context(|| format!("--checkpoint {}", path.display()))
}

fn validated(cfg: RunConfig) -> Result<RunConfig> {
    cfg.validate().context("invalid configuration")?;
    Ok(cfg)
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn synth(a: crate::SynthArgs, m: &ArgMatches) -> Result<()> {
    let mut cfg = load_config(&a.config)?;
    let b = &mut cfg.benchmark;
    if given(m, "patients") {
        b.n_patients = a.patients;
    }
    if given(m, "seed") {
        b.seed = a.seed;
    }
    if given(m, "train_per_patient") {
        b.train_per_patient = a.train_per_patient;
    }
    if given(m, "val_per_patient") {
        b.val_per_patient = a.val_per_patient;
    }
    if given(m, "test_per_patient") {
        b.test_per_patient = a.test_per_patient;
    }
    if given(m, "artifact_fraction") {
        b.artifact_fraction = a.artifact_fraction;
    }
    if given(m, "fs") {
        b.fs_hz = a.fs;
    }
    let cfg = validated(cfg)?;
    let bench = make_benchmark(&cfg.benchmark)?;
    write_benchmark(&bench, &a.out).with_context(|| format!("--out {}", a.out.display()))?;
    let data = bench.dataset();
    let count = |s: Split| data.split(s).count();
    eprintln!(
        "wrote {} patients to {} ({} train, {} validation, {} test segments)",
        bench.signals.len(),
        a.out.display(),
        count(Split::Train),
        count(Split::Validation),
        count(Split::Test)
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    summary: &'a detector::FitSummary,
    epochs: &'a [genclean_core::vae::EpochLosses],
}

fn train(a: crate::TrainArgs, m: &ArgMatches) -> Result<()> {
    let mut cfg = load_config(&a.config)?;
    a.train.apply(m, &mut cfg);
    a.detector.apply(m, &mut cfg);
    let cfg = validated(cfg)?;
    let data = load_bench(&a.data)?.dataset();
    let mut epochs = Vec::new();
    let (det, summary) = detector::fit_with(
        &data.segments(Split::Train),
        &data.segments(Split::Validation),
        &cfg.architecture,
        &cfg.detector,
        &cfg.train,
        |e| {
            eprintln!(
                "epoch {:>3}  train {:.3}  val {:.3}  val recon {:.3}",
                e.epoch, e.train_total, e.val_total, e.val_recon
            );
            epochs.push(e.clone());
        },
    )?;
    det.save(&a.out).with_context(|| format!("--out {}", a.out.display()))?;
    if let Some(path) = &a.report {
        write_json(
            &TrainOutput {
                summary: &summary,
                epochs: &epochs,
            },
            Some(path),
        )?;
    }
    eprintln!(
        "best epoch {} of {}, threshold {:.6}, collapse flag {}",
        summary.report.best_epoch, summary.report.epochs.len(), summary.threshold, summary.report.collapse_flag
    );
    if a.strict && summary.report.collapse_flag {
        return Err(Exit {
            code: EXIT_NUMERIC,
            message: format!(
                "posterior collapse: validation reconstruction does not beat the constant predictor ({:.3}); checkpoint written to {}",
                summary.report.baseline_recon,
                a.out.display()
            ),
        }
        .into());
    }
    Ok(())
}

fn calibrate(a: crate::CalibrateArgs, m: &ArgMatches) -> Result<()> {
    let cfg = validated(load_config(&a.config)?)?;
    let (model, meta) = load_checkpoint(&a.checkpoint).with_context(|| format!("--checkpoint {}", a.checkpoint.display()))?;
    let mut det_cfg = cfg.detector.with_meta(&meta);
    if given(m, "metric") {
        det_cfg.score_metric = a.metric;
    }
    if given(m, "percentile") {
        det_cfg.threshold_percentile = a.percentile;
    }
    let data = load_bench(&a.data)?.dataset();
    let val = usable_segments(&det_cfg, &data.segments(Split::Validation));
    let det = CalibratedDetector::calibrate(model, det_cfg, &val)?;
    det.save(&a.out).with_context(|| format!("--out {}", a.out.display()))?;
    eprintln!("threshold {:.6} from {} validation segments", det.threshold(), val.len());
    Ok(())
}

fn write_verdicts(path: &Path, records: impl IntoIterator<Item = VerdictRecord>) -> Result<()> {
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn clean(a: crate::CleanArgs) -> Result<()> {
    let cfg = validated(load_config(&a.config)?)?;
    let signal = read_input(&a.input).context("--input")?;
    let det = load_detector(&a.checkpoint, &cfg)?;
    let out = clean_signal(&det, &signal).with_context(|| format!("--input {}", a.input.display()))?;
    write_signal(&out.cleaned, &a.out, format_of(&a.out)?).with_context(|| format!("--out {}", a.out.display()))?;
    if let Some(path) = &a.verdicts {
        write_verdicts(path, out.verdicts.iter().map(|(s, v)| VerdictRecord::new(s, v)))?;
    }
    if let Some(path) = &a.emit_decoded {
        let mut decoded = vec![f64::NAN; signal.len()];
        for (seg, v) in &out.verdicts {
            decoded[seg.start_index..seg.start_index + v.decoded.len()].copy_from_slice(&v.decoded);
        }
        let decoded = Signal::new(decoded, signal.fs_hz, signal.modality, signal.patient_id.clone())?;
        write_signal(&decoded, path, SignalFormat::RawF32).with_context(|| format!("--emit-decoded {}", path.display()))?;
    }
    eprintln!(
        "{} of {} windows masked; {} trailing samples left unjudged",
        out.artifact_count(),
        out.verdicts.len(),
        out.unjudged_tail
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    segments: usize,
    threshold: f64,
    confusion: Confusion,
    metrics: Metrics,
    auc: Option<f64>,
}

fn eval(a: crate::EvalArgs) -> Result<()> {
    let cfg = validated(load_config(&a.config)?)?;
    let det = load_detector(&a.checkpoint, &cfg)?;
    let test = load_bench(&a.data)?.dataset().segments(Split::Test);
    let ev = evaluate(&det, &test)?;
    write_json(
        &EvalOutput {
            segments: test.len(),
            threshold: det.threshold(),
            confusion: ev.confusion,
            metrics: ev.metrics,
            auc: ev.auc,
        },
        a.out.as_deref(),
    )
}

fn events(a: crate::EventsArgs, m: &ArgMatches) -> Result<()> {
    let mut cfg = load_config(&a.config)?;
    if given(m, "sbp_limit") {
        cfg.events.sbp_limit = a.sbp_limit;
    }
    if given(m, "dbp_limit") {
        cfg.events.dbp_limit = a.dbp_limit;
    }
    let cfg = validated(cfg)?;
    let raw = read_input(&a.raw).context("--raw")?;
    let cleaned = match (&a.cleaned, &a.checkpoint) {
        (Some(path), _) => read_input(path).context("--cleaned")?,
        (None, Some(ckpt)) => clean_signal(&load_detector(ckpt, &cfg)?, &raw)?.cleaned,
        (None, None) => bail!("one of --cleaned or --checkpoint is required"),
    };
    let report = event_reduction_report(&raw, &cleaned, &cfg.events, &cfg.peaks).context("--raw/--cleaned")?;
    write_json(&report, a.out.as_deref())
}

fn matrix(a: crate::MatrixArgs, m: &ArgMatches) -> Result<()> {
    let mut cfg = load_config(&a.config)?;
    a.train.apply(m, &mut cfg);
    let cfg = validated(cfg)?;
    let pooled = load_detector(&a.checkpoint, &cfg)?;
    let data = load_bench(&a.data)?.dataset();
    let det_cfg = pooled.config;
    let arch = pooled.model.arch().clone();
    let matrix = generalisation_matrix(&data, &pooled, &arch, &det_cfg, &cfg.train)?;
    write_json(&matrix, Some(&a.out))?;
    if let Some(path) = &a.csv {
        std::fs::write(path, matrix.to_csv()).with_context(|| format!("--csv {}", path.display()))?;
    }
    eprintln!(
        "mean diagonal {:.3}, off-diagonal {:.3}, pooled {:.3}",
        matrix.mean_diagonal_accuracy(),
        matrix.mean_off_diagonal_accuracy(),
        matrix.pooled_mean_accuracy()
    );
    Ok(())
}

fn stream(a: crate::StreamArgs, m: &ArgMatches) -> Result<()> {
    let mut cfg = load_config(&a.config)?;
    if given(m, "pace") {
        cfg.stream.pace = a.pace;
    }
    let cfg = validated(cfg)?;
    let signal = read_input(&a.input).context("--input")?;
    let det = load_detector(&a.checkpoint, &cfg)?;
    let mut w = create(&a.out)?;
    let stats = run_stream(&signal, &det, cfg.stream.pace, |seg, v| {
        serde_json::to_writer(&mut w, &VerdictRecord::new(seg, v)).map_err(|e| genclean_core::Error::InvalidInput(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| genclean_core::Error::InvalidInput(e.to_string()))?;
        Ok(())
    })
    .with_context(|| format!("--input {}", a.input.display()))?;
    w.flush()?;
    write_json(&stats, a.stats.as_deref())
}

#[derive(Serialize)]
struct SweepOutput {
    flops_per_segment: u64,
    points: Vec<genclean_core::stream::SweepPoint>,
}

fn freq_sweep(a: crate::FreqSweepArgs, m: &ArgMatches) -> Result<()> {
    let mut cfg = load_config(&a.config)?;
    if given(m, "rates") {
        cfg.stream.sweep_rates_hz = a.rates.clone();
    }
    let cfg = validated(cfg)?;
    let det = load_detector(&a.checkpoint, &cfg)?;
    let test = load_bench(&a.data)?.dataset().segments(Split::Test);
    let points = frequency_sweep(&det, &test, &cfg.stream.sweep_rates_hz)?;
    write_json(
        &SweepOutput {
            flops_per_segment: estimate_flops(det.model.arch()).total,
            points,
        },
        a.out.as_deref(),
    )
}

#[derive(Serialize)]
struct LatentCell {
    latent_dim: usize,
    metric: genclean_core::detector::ScoreMetric,
    threshold: f64,
    f1: f64,
    accuracy: f64,
    auc: Option<f64>,
    collapse_flag: bool,
}

fn latent_sweep(a: crate::LatentSweepArgs, m: &ArgMatches) -> Result<()> {
    let mut cfg = load_config(&a.config)?;
    a.train.apply(m, &mut cfg);
    if given(m, "dims") {
        cfg.latent_sweep.latent_dims = a.dims.clone();
    }
    if given(m, "metrics") {
        cfg.latent_sweep.metrics = a.metrics.clone();
    }
    let cfg = validated(cfg)?;
    let data = load_bench(&a.data)?.dataset();
    let train = data.segments(Split::Train);
    let val = data.segments(Split::Validation);
    let test = data.segments(Split::Test);
    let mut cells = Vec::new();
    for &dim in &cfg.latent_sweep.latent_dims {
        let arch = cfg.architecture.clone().with_latent_dim(dim);
        // The score metric only enters calibration and scoring, so one model
        // per latent size serves every metric.
        let (trained, summary) = detector::fit(&train, &val, &arch, &cfg.detector, &cfg.train)
            .with_context(|| format!("training with latent_dim {dim}"))?;
        for &metric in &cfg.latent_sweep.metrics {
            let det_cfg = detector::DetectorConfig {
                score_metric: metric,
                ..cfg.detector
            };
            let det = CalibratedDetector::calibrate(trained.model.clone(), det_cfg, &usable_segments(&det_cfg, &val))?;
            let ev = evaluate(&det, &test)?;
            eprintln!("latent {dim:>3} {metric}: f1 {:.3} accuracy {:.3}", ev.metrics.f1, ev.metrics.accuracy);
            cells.push(LatentCell {
                latent_dim: dim,
                metric,
                threshold: det.threshold(),
                f1: ev.metrics.f1,
                accuracy: ev.metrics.accuracy,
                auc: ev.auc,
                collapse_flag: summary.report.collapse_flag,
            });
        }
    }
    write_json(&cells, a.out.as_deref())
}

#[derive(Serialize)]
struct LatentRecord<'a> {
    patient_id: &'a str,
    start_index: usize,
    split: Option<Split>,
    label: Option<Label>,
    score: Option<f64>,
    latent: &'a [f64],
}

fn dump_latent(a: crate::DumpLatentArgs) -> Result<()> {
    let cfg = validated(load_config(&a.config)?)?;
    let det = load_detector(&a.checkpoint, &cfg)?;
    let items: Vec<(Option<Split>, Segment)> = match (&a.data, &a.input) {
        (Some(dir), _) => load_bench(dir)?.dataset().items.into_iter().map(|(s, seg)| (Some(s), seg)).collect(),
        (None, Some(path)) => {
            let signal = read_input(path).context("--input")?;
            segment_signal(&signal, det.config.window_s, det.config.window_s)?
                .into_iter()
                .map(|seg| (None, seg))
                .collect()
        }
        (None, None) => bail!("one of --data or --input is required"),
    };
    let mut w = create(&a.out)?;
    for (split, seg) in &items {
        let scored = det.score(seg).with_context(|| format!("segment {} of {}", seg.start_index, seg.patient_id))?;
        let record = LatentRecord {
            patient_id: &seg.patient_id,
            start_index: seg.start_index,
            split: *split,
            label: seg.label,
            score: scored.score.is_finite().then_some(scored.score),
            latent: &scored.latent.mu,
        };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    eprintln!("wrote {} latent vectors to {}", items.len(), a.out.display());
    Ok(())
}
