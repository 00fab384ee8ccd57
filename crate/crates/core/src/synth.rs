//! Deterministic synthetic arterial pressure with injected artifacts.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{
    read_signal, seconds_to_samples, write_signal, Label, LabeledDataset, Modality, Segment, Signal, SignalFormat, Split,
    SEGMENT_SECONDS,
};

/// Measurement noise of every synthetic recording, in mmHg.
pub const NOISE_SIGMA: f64 = 0.5;
/// Mask coverage at which a segment counts as an artifact.
pub const ARTIFACT_COVERAGE: f64 = 0.10;
/// Relative half-width of the uniform beat-period jitter.
pub const PERIOD_JITTER: f64 = 0.05;
/// Depth of the respiratory amplitude modulation.
pub const RESP_DEPTH: f64 = 0.05;
/// Time constant of the drift low-pass, in seconds.
const DRIFT_TAU_S: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientProfile {
    pub map_mmhg: f64,
    pub pulse_pressure_mmhg: f64,
    pub hr_bpm: f64,
    /// Relative height of the dicrotic bump, in [0, 1].
    pub notch_depth: f64,
    pub resp_rate_hz: f64,
    /// RMS of the slow baseline drift, in mmHg.
    pub drift_scale: f64,
    pub seed: u64,
}

/// Ranges patient profiles are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileRanges {
    pub map_mmhg: [f64; 2],
    pub pulse_pressure_mmhg: [f64; 2],
    pub hr_bpm: [f64; 2],
    pub notch_depth: [f64; 2],
    pub resp_rate_hz: [f64; 2],
    pub drift_scale: [f64; 2],
}

impl Default for ProfileRanges {
    fn default() -> Self {
        Self {
            map_mmhg: [70.0, 100.0],
            pulse_pressure_mmhg: [30.0, 60.0],
            hr_bpm: [50.0, 120.0],
            notch_depth: [0.2, 0.8],
            resp_rate_hz: [0.2, 0.3],
            drift_scale: [1.0, 4.0],
        }
    }
}

impl PatientProfile {
    pub fn sample<R: Rng>(ranges: &ProfileRanges, rng: &mut R) -> Self {
        let mut draw = |[lo, hi]: [f64; 2]| if hi > lo { rng.random_range(lo..hi) } else { lo };
        Self {
            map_mmhg: draw(ranges.map_mmhg),
            pulse_pressure_mmhg: draw(ranges.pulse_pressure_mmhg),
            hr_bpm: draw(ranges.hr_bpm),
            notch_depth: draw(ranges.notch_depth),
            resp_rate_hz: draw(ranges.resp_rate_hz),
            drift_scale: draw(ranges.drift_scale),
            seed: rng.random(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.map_mmhg > 0.0) || !(self.pulse_pressure_mmhg > 0.0) {
            return Err(Error::invalid("map_mmhg and pulse_pressure_mmhg must be positive"));
        }
        if !(30.0..=220.0).contains(&self.hr_bpm) {
            return Err(Error::invalid(format!("hr_bpm must lie in [30, 220], got {}", self.hr_bpm)));
        }
        if !(0.0..=1.0).contains(&self.notch_depth) {
            return Err(Error::invalid(format!("notch_depth must lie in [0, 1], got {}", self.notch_depth)));
        }
        if !(self.resp_rate_hz >= 0.0) || !(self.drift_scale >= 0.0) {
            return Err(Error::invalid("resp_rate_hz and drift_scale must be non-negative"));
        }
        Ok(())
    }
}

fn gauss(u: f64, center: f64, width: f64) -> f64 {
    (-0.5 * ((u - center) / width).powi(2)).exp()
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Normalized beat shape over phase `[0, 1]`.
///
/// The raw shape is a systolic Gaussian, a dicrotic Gaussian and a
/// diastolic run-off, rebased to equal values at both ends and scaled to
/// [0, 1].
/// A power `gamma` then sets the mean to exactly 1/3, so that
/// `map + pp * (h - 1/3)` has mean `map`, maximum `map + 2pp/3` and minimum
/// `map - pp/3`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatTemplate {
    table: Vec<f64>,
}

impl BeatTemplate {
    const RESOLUTION: usize = 2048;

    pub fn new(notch_depth: f64) -> Self {
        let raw = |u: f64| {
            gauss(u, 0.15, 0.055) + notch_depth * 0.3 * gauss(u, 0.42, 0.06) + 0.35 * (1.0 - u).powi(2) * smoothstep(u / 0.15)
        };
        let (r0, r1) = (raw(0.0), raw(1.0));
        let n = Self::RESOLUTION;
        let base: Vec<f64> = (0..=n)
            .map(|i| {
                let u = i as f64 / n as f64;
                raw(u) - (r0 * (1.0 - u) + r1 * u)
            })
            .collect();
        let lo = base.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = base.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let unit: Vec<f64> = base.iter().map(|v| (v - lo) / (hi - lo)).collect();
        let mean_of = |g: f64| {
            // Trapezoid mean over the closed grid.
            let s: f64 = unit.iter().map(|v| v.powf(g)).sum::<f64>() - 0.5 * (unit[0].powf(g) + unit[n].powf(g));
            s / n as f64
        };
        let (mut g_lo, mut g_hi) = (0.05, 20.0);
        for _ in 0..100 {
            let mid = 0.5 * (g_lo + g_hi);
            if mean_of(mid) > 1.0 / 3.0 {
                g_lo = mid;
            } else {
                g_hi = mid;
            }
        }
        let gamma = 0.5 * (g_lo + g_hi);
        Self {
            table: unit.iter().map(|v| v.powf(gamma)).collect(),
        }
    }

    /// Linear interpolation at phase `u` in [0, 1].
    pub fn at(&self, u: f64) -> f64 {
        let n = Self::RESOLUTION;
        let x = u.clamp(0.0, 1.0) * n as f64;
        let i = (x.floor() as usize).min(n - 1);
        let f = x - i as f64;
        self.table[i] * (1.0 - f) + self.table[i + 1] * f
    }

    pub fn mean(&self) -> f64 {
        let n = Self::RESOLUTION;
        (self.table.iter().sum::<f64>() - 0.5 * (self.table[0] + self.table[n])) / n as f64
    }
}

/// Zero-mean low-passed random walk with the given RMS.
fn drift(n: usize, fs_hz: f64, rms: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if rms == 0.0 || n == 0 {
        return vec![0.0; n];
    }
    let alpha = 1.0 - (-1.0 / (DRIFT_TAU_S * fs_hz)).exp();
    let step = Normal::new(0.0, 1.0 / fs_hz.sqrt()).expect("valid normal");
    let mut walk = 0.0;
    let mut low = 0.0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        walk += step.sample(rng);
        low += alpha * (walk - low);
        out.push(low);
    }
    let mean = out.iter().sum::<f64>() / n as f64;
    let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let scale = if var > 0.0 { rms / var.sqrt() } else { 0.0 };
    out.iter_mut().for_each(|v| *v = (*v - mean) * scale);
    out
}

/// A synthetic recording and the sample index where each beat starts.
pub fn synth_patient(profile: &PatientProfile, duration_s: f64, fs_hz: f64) -> Result<(Signal, Vec<usize>)> {
    profile.validate()?;
    if !(duration_s >= SEGMENT_SECONDS) {
        return Err(Error::invalid(format!("duration must be at least {SEGMENT_SECONDS} s, got {duration_s}")));
    }
    if !(50.0..=500.0).contains(&fs_hz) {
        return Err(Error::invalid(format!("sample rate must lie in [50, 500] Hz, got {fs_hz}")));
    }
    let n = seconds_to_samples(duration_s, fs_hz);
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let template = BeatTemplate::new(profile.notch_depth);
    let period = 60.0 / profile.hr_bpm;

    // Beat start times; the first beat begins at a random phase before t = 0.
    let mut starts = Vec::new();
    let mut t = -rng.random_range(0.0..period);
    while t < duration_s {
        let len = period * (1.0 + rng.random_range(-PERIOD_JITTER..PERIOD_JITTER));
        starts.push((t, len));
        t += len;
    }
    let baseline = drift(n, fs_hz, profile.drift_scale, &mut rng);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid normal");
    let (map, pp) = (profile.map_mmhg, profile.pulse_pressure_mmhg);
    let mut samples = Vec::with_capacity(n);
    let mut beat = 0;
    for (i, &b) in baseline.iter().enumerate() {
        let t = i as f64 / fs_hz;
        while beat + 1 < starts.len() && starts[beat + 1].0 <= t {
            beat += 1;
        }
        let (t0, len) = starts[beat];
        let h = template.at((t - t0) / len);
        let resp = 1.0 + RESP_DEPTH * (2.0 * PI * profile.resp_rate_hz * t).sin();
        samples.push(map + pp * (h - 1.0 / 3.0) * resp + b + noise.sample(&mut rng));
    }
    let onsets = starts
        .iter()
        .filter(|(t0, _)| *t0 >= 0.0)
        .map(|(t0, _)| (t0 * fs_hz).ceil() as usize)
        .filter(|&i| i < n)
        .collect();
    let signal = Signal::new(samples, fs_hz, Modality::Abp, format!("synthetic-{}", profile.seed))?;
    Ok((signal, onsets))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Flush,
    BloodDraw,
    Damping,
    NoiseBurst,
    Dropout,
    StepOffset,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 6] = [
        ArtifactKind::Flush,
        ArtifactKind::BloodDraw,
        ArtifactKind::Damping,
        ArtifactKind::NoiseBurst,
        ArtifactKind::Dropout,
        ArtifactKind::StepOffset,
    ];

    /// A magnitude typical for the kind.
    ///
    /// Flush: plateau level in mmHg. BloodDraw: held level in mmHg.
    /// Damping: pulsatile gain. NoiseBurst: noise sigma in mmHg.
    /// Dropout: unused. StepOffset: offset in mmHg.
    pub fn sample_magnitude<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            ArtifactKind::Flush => rng.random_range(280.0..320.0),
            ArtifactKind::BloodDraw => rng.random_range(0.0..10.0),
            ArtifactKind::Damping => rng.random_range(0.05..0.3),
            ArtifactKind::NoiseBurst => 25.0,
            ArtifactKind::Dropout => 0.0,
            ArtifactKind::StepOffset => {
                let m = rng.random_range(20.0..40.0);
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactSpec {
    pub kind: ArtifactKind,
    pub start_s: f64,
    pub duration_s: f64,
    pub magnitude: f64,
}

/// Per-sample artifact indicator aligned with a signal.
pub type GroundTruthMask = Vec<bool>;

fn moving_average(x: &[f64], half: usize) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn peak_to_peak(x: &[f64]) -> f64 {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

/// Applies `specs` in order and marks every affected sample.
pub fn inject_artifacts(signal: &Signal, specs: &[ArtifactSpec], seed: u64) -> Result<(Signal, GroundTruthMask)> {
    let fs = signal.fs_hz;
    let n = signal.len();
    let mut out = signal.clone();
    let mut mask = vec![false; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid normal");
    for (k, spec) in specs.iter().enumerate() {
        if !(spec.duration_s > 0.0) || !(spec.start_s >= 0.0) {
            return Err(Error::invalid(format!("artifact {k}: start must be >= 0 and duration > 0")));
        }
        let i0 = seconds_to_samples(spec.start_s, fs);
        let i1 = seconds_to_samples(spec.start_s + spec.duration_s, fs);
        if i1 > n || i0 >= i1 {
            return Err(Error::invalid(format!(
                "artifact {k} ({:?} at {} s for {} s) lies outside the {:.3} s signal",
                spec.kind,
                spec.start_s,
                spec.duration_s,
                signal.duration_s()
            )));
        }
        let x = &mut out.samples;
        match spec.kind {
            ArtifactKind::Flush => {
                let len = i1 - i0;
                let ramp = ((0.5 * fs) as usize).min(len / 4).max(1);
                let (start, end) = (x[i0], x[i1 - 1]);
                for (j, v) in x[i0..i1].iter_mut().enumerate() {
                    let level = if j < ramp {
                        start + (spec.magnitude - start) * (j as f64 + 1.0) / ramp as f64
                    } else if j >= len - ramp {
                        let r = (len - j) as f64 / (ramp as f64 + 1.0);
                        end + (spec.magnitude - end) * r
                    } else {
                        spec.magnitude
                    };
                    *v = level + noise.sample(&mut rng);
                }
            }
            ArtifactKind::BloodDraw => {
                for v in &mut x[i0..i1] {
                    *v = spec.magnitude + noise.sample(&mut rng);
                }
            }
            ArtifactKind::Damping => {
                let mean = moving_average(x, (0.75 * fs) as usize);
                let region: Vec<f64> = (i0..i1).map(|i| x[i] - mean[i]).collect();
                let mut gain = spec.magnitude.clamp(0.0, 1.0);
                let damped = |g: f64| (i0..i1).map(|i| mean[i] + g * region[i - i0]).collect::<Vec<_>>();
                let mut values = damped(gain);
                while peak_to_peak(&values) >= 15.0 && gain > 1e-6 {
                    gain *= 0.5;
                    values = damped(gain);
                }
                if peak_to_peak(&values) >= 15.0 {
                    let m = values.iter().sum::<f64>() / values.len() as f64;
                    values.iter_mut().for_each(|v| *v = m);
                }
                x[i0..i1].copy_from_slice(&values);
            }
            ArtifactKind::NoiseBurst => {
                let burst = Normal::new(0.0, spec.magnitude.abs()).map_err(|e| Error::invalid(e.to_string()))?;
                for v in &mut x[i0..i1] {
                    *v += burst.sample(&mut rng);
                }
            }
            ArtifactKind::Dropout => {
                let held = x[i0.saturating_sub(1)];
                x[i0..i1].fill(held);
            }
            ArtifactKind::StepOffset => {
                for v in &mut x[i0..i1] {
                    *v += spec.magnitude;
                }
            }
        }
        mask[i0..i1].fill(true);
    }
    Ok((out, mask))
}

/// Label rule: artifact iff the mask covers at least 10% of the window.
pub fn label_for(mask: &[bool]) -> Label {
    let covered = mask.iter().filter(|&&m| m).count();
    if covered as f64 >= ARTIFACT_COVERAGE * mask.len() as f64 && covered > 0 {
        Label::Artifact
    } else {
        Label::Clean
    }
}

/// An artifact placed wholly inside one window of length `window_s`.
pub fn random_artifact_in_window<R: Rng>(window_start_s: f64, window_s: f64, kinds: &[ArtifactKind], rng: &mut R) -> ArtifactSpec {
    let kind = *kinds.choose(rng).expect("at least one artifact kind");
    let duration_s = rng.random_range(0.2 * window_s..0.6 * window_s);
    let offset = rng.random_range(0.0..(window_s - duration_s));
    ArtifactSpec {
        kind,
        start_s: window_start_s + offset,
        duration_s,
        magnitude: kind.sample_magnitude(rng),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub n_patients: usize,
    pub train_per_patient: usize,
    pub val_per_patient: usize,
    pub test_per_patient: usize,
    /// Probability that a training or validation window carries an artifact.
    pub artifact_fraction: f64,
    pub fs_hz: f64,
    pub seed: u64,
    pub ranges: ProfileRanges,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_patients: 10,
            train_per_patient: 200,
            val_per_patient: 40,
            test_per_patient: 100,
            artifact_fraction: 0.12,
            fs_hz: 120.0,
            seed: 7,
            ranges: ProfileRanges::default(),
        }
    }
}

/// Where one benchmark segment sits in its patient's recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEntry {
    pub split: Split,
    pub start_index: usize,
    pub label: Label,
    pub artifact: Option<ArtifactSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientEntry {
    pub patient_id: String,
    pub profile: PatientProfile,
    pub segments: Vec<SegmentEntry>,
}

/// Benchmark description without the waveforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: BenchmarkConfig,
    pub window_s: f64,
    pub patients: Vec<PatientEntry>,
}

/// Recording, ground-truth mask and segment layout per patient.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub manifest: Manifest,
    pub signals: Vec<Signal>,
    pub masks: Vec<GroundTruthMask>,
}

impl Benchmark {
    /// Cuts the recordings into labeled segments.
    pub fn dataset(&self) -> LabeledDataset {
        dataset_from(&self.manifest, &self.signals)
    }
}

/// Rebuilds segments from recordings laid out by `manifest`.
pub fn dataset_from(manifest: &Manifest, signals: &[Signal]) -> LabeledDataset {
    let mut items = Vec::new();
    for (entry, signal) in manifest.patients.iter().zip(signals) {
        let w = seconds_to_samples(manifest.window_s, signal.fs_hz);
        for s in &entry.segments {
            items.push((
                s.split,
                Segment {
                    values: signal.samples[s.start_index..s.start_index + w].to_vec(),
                    fs_hz: signal.fs_hz,
                    duration_s: manifest.window_s,
                    modality: signal.modality,
                    patient_id: entry.patient_id.clone(),
                    label: Some(s.label),
                    start_index: s.start_index,
                },
            ));
        }
    }
    LabeledDataset { items }
}

pub fn patient_id(index: usize) -> String {
    format!("p{index:02}")
}

/// Builds one long recording per patient and assigns its non-overlapping
/// windows to splits at random. Training and validation windows carry an
/// artifact with probability `artifact_fraction`; half of the test windows
/// (rounded down) carry one.
pub fn make_benchmark(cfg: &BenchmarkConfig) -> Result<Benchmark> {
    if !(0.0..=1.0).contains(&cfg.artifact_fraction) {
        return Err(Error::invalid(format!("artifact_fraction must lie in [0, 1], got {}", cfg.artifact_fraction)));
    }
    let window_s = SEGMENT_SECONDS;
    let w = seconds_to_samples(window_s, cfg.fs_hz);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut patients = Vec::with_capacity(cfg.n_patients);
    let mut signals = Vec::with_capacity(cfg.n_patients);
    let mut masks = Vec::with_capacity(cfg.n_patients);
    for p in 0..cfg.n_patients {
        let profile = PatientProfile::sample(&cfg.ranges, &mut rng);
        let n_windows = cfg.train_per_patient + cfg.val_per_patient + cfg.test_per_patient;
        let mut prng = ChaCha8Rng::seed_from_u64(profile.seed ^ 0xa11f_ac75);
        let mut order: Vec<usize> = (0..n_windows).collect();
        order.shuffle(&mut prng);
        let mut splits = vec![Split::Train; n_windows];
        let (tr, va) = (cfg.train_per_patient, cfg.val_per_patient);
        for (rank, &win) in order.iter().enumerate() {
            splits[win] = if rank < tr {
                Split::Train
            } else if rank < tr + va {
                Split::Validation
            } else {
                Split::Test
            };
        }
        let test_windows: Vec<usize> = order[tr + va..].to_vec();
        let test_artifacts: Vec<usize> = test_windows[..test_windows.len() / 2].to_vec();
        let mut planned: Vec<Option<ArtifactSpec>> = vec![None; n_windows];
        for win in 0..n_windows {
            let contaminate = match splits[win] {
                Split::Test => test_artifacts.contains(&win),
                _ => prng.random_bool(cfg.artifact_fraction),
            };
            if contaminate {
                planned[win] = Some(random_artifact_in_window(win as f64 * window_s, window_s, &ArtifactKind::ALL, &mut prng));
            }
        }
        let (base, _) = if n_windows > 0 {
            synth_patient(&profile, n_windows as f64 * window_s, cfg.fs_hz)?
        } else {
            (Signal::new(vec![profile.map_mmhg], cfg.fs_hz, Modality::Abp, "")?, Vec::new())
        };
        let specs: Vec<ArtifactSpec> = planned.iter().flatten().copied().collect();
        let (mut signal, mask) = inject_artifacts(&base, &specs, prng.random())?;
        let id = patient_id(p);
        signal.patient_id = id.clone();
        let segments = (0..n_windows)
            .map(|win| {
                let start = win * w;
                SegmentEntry {
                    split: splits[win],
                    start_index: start,
                    label: label_for(&mask[start..start + w]),
                    artifact: planned[win],
                }
            })
            .collect();
        patients.push(PatientEntry {
            patient_id: id,
            profile,
            segments,
        });
        signals.push(signal);
        masks.push(mask);
    }
    Ok(Benchmark {
        manifest: Manifest {
            config: *cfg,
            window_s,
            patients,
        },
        signals,
        masks,
    })
}

/// A recording before and after artifact injection, with the windows that
/// received one.
#[derive(Debug, Clone, PartialEq)]
pub struct ContaminatedRecording {
    pub truth: Signal,
    pub raw: Signal,
    pub mask: GroundTruthMask,
    pub specs: Vec<ArtifactSpec>,
    pub artifact_windows: Vec<usize>,
}

/// `n_windows` windows of one patient, `n_artifacts` of them (chosen at
/// random) carrying one artifact of the given kinds.
pub fn contaminated_recording(
    profile: &PatientProfile,
    n_windows: usize,
    n_artifacts: usize,
    kinds: &[ArtifactKind],
    fs_hz: f64,
    seed: u64,
) -> Result<ContaminatedRecording> {
    if n_artifacts > n_windows {
        return Err(Error::invalid(format!("{n_artifacts} artifacts do not fit in {n_windows} windows")));
    }
    let window_s = SEGMENT_SECONDS;
    let (truth, _) = synth_patient(profile, n_windows as f64 * window_s, fs_hz)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut windows: Vec<usize> = (0..n_windows).collect();
    windows.shuffle(&mut rng);
    let mut artifact_windows = windows[..n_artifacts].to_vec();
    artifact_windows.sort_unstable();
    let specs: Vec<ArtifactSpec> = artifact_windows
        .iter()
        .map(|&win| random_artifact_in_window(win as f64 * window_s, window_s, kinds, &mut rng))
        .collect();
    let (raw, mask) = inject_artifacts(&truth, &specs, rng.random())?;
    Ok(ContaminatedRecording {
        truth,
        raw,
        mask,
        specs,
        artifact_windows,
    })
}

/// Writes `manifest.json` plus, per patient, `<id>.f32` and `<id>_mask.f32`
/// (0/1 samples) with their sidecars.
pub fn write_benchmark(bench: &Benchmark, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&bench.manifest).map_err(|e| Error::invalid(e.to_string()))?;
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    for ((entry, signal), mask) in bench.manifest.patients.iter().zip(&bench.signals).zip(&bench.masks) {
        write_signal(signal, &dir.join(format!("{}.f32", entry.patient_id)), SignalFormat::RawF32)?;
        let mask_signal = Signal::new(
            mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
            signal.fs_hz,
            signal.modality,
            entry.patient_id.clone(),
        )?;
        write_signal(&mask_signal, &dir.join(format!("{}_mask.f32", entry.patient_id)), SignalFormat::RawF32)?;
    }
    Ok(())
}

pub fn read_benchmark(dir: &Path) -> Result<Benchmark> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(manifest_path.display().to_string(), e.to_string()))?;
    let mut signals = Vec::with_capacity(manifest.patients.len());
    let mut masks = Vec::with_capacity(manifest.patients.len());
    for entry in &manifest.patients {
        let path = dir.join(format!("{}.f32", entry.patient_id));
        let signal = read_signal(&path, SignalFormat::RawF32)?;
        let w = seconds_to_samples(manifest.window_s, signal.fs_hz);
        if let Some(s) = entry.segments.iter().find(|s| s.start_index + w > signal.len()) {
            return Err(Error::parse(
                manifest_path.display().to_string(),
                format!(
                    "segment at {} of {} runs past the recording ({} samples)",
                    s.start_index,
                    entry.patient_id,
                    signal.len()
                ),
            ));
        }
        let mask_path = dir.join(format!("{}_mask.f32", entry.patient_id));
        let mask = if mask_path.exists() {
            read_signal(&mask_path, SignalFormat::RawF32)?.samples.iter().map(|&v| v != 0.0).collect()
        } else {
            vec![false; signal.len()]
        };
        signals.push(signal);
        masks.push(mask);
    }
    Ok(Benchmark {
        manifest,
        signals,
        masks,
    })
}
