//! Waveform and segment value types, segmentation, and file I/O.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nominal segment duration in seconds.
pub const SEGMENT_SECONDS: f64 = 10.0;

/// Maximum relative deviation of a CSV time step from the mean step.
const CSV_DT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    #[default]
    Abp,
    Ppg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Clean,
    Artifact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// A uniformly sampled single-channel recording.
///
/// Raw inputs are NaN-free; NaN only appears in cleaned outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub fs_hz: f64,
    pub modality: Modality,
    pub patient_id: String,
}

impl Signal {
    pub fn new(
        samples: Vec<f64>,
        fs_hz: f64,
        modality: Modality,
        patient_id: impl Into<String>,
    ) -> Result<Self> {
        if !(fs_hz > 0.0 && fs_hz.is_finite()) {
            return Err(Error::invalid(format!("sample rate must be positive, got {fs_hz}")));
        }
        if samples.is_empty() {
            return Err(Error::invalid("empty signal"));
        }
        Ok(Self {
            samples,
            fs_hz,
            modality,
            patient_id: patient_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs_hz
    }

    pub fn has_nan(&self) -> bool {
        self.samples.iter().any(|v| v.is_nan())
    }
}

/// A fixed-duration window of a [`Signal`].
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub values: Vec<f64>,
    pub fs_hz: f64,
    pub duration_s: f64,
    pub modality: Modality,
    pub patient_id: String,
    pub label: Option<Label>,
    pub start_index: usize,
}

impl Segment {
    /// Wraps a bare window of samples as an unlabeled segment starting at 0.
    pub fn from_values(values: Vec<f64>, fs_hz: f64, modality: Modality) -> Self {
        let duration_s = values.len() as f64 / fs_hz;
        Self {
            values,
            fs_hz,
            duration_s,
            modality,
            patient_id: String::new(),
            label: None,
            start_index: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Segments tagged with their split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledDataset {
    pub items: Vec<(Split, Segment)>,
}

impl LabeledDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Segment> + '_ {
        self.items
            .iter()
            .filter(move |(s, _)| *s == split)
            .map(|(_, seg)| seg)
    }

    pub fn segments(&self, split: Split) -> Vec<Segment> {
        self.split(split).cloned().collect()
    }

    /// Distinct patient ids in first-appearance order.
    pub fn patients(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (_, seg) in &self.items {
            if !out.iter().any(|p| p == &seg.patient_id) {
                out.push(seg.patient_id.clone());
            }
        }
        out
    }

    pub fn for_patient(&self, patient_id: &str) -> LabeledDataset {
        LabeledDataset {
            items: self
                .items
                .iter()
                .filter(|(_, seg)| seg.patient_id == patient_id)
                .cloned()
                .collect(),
        }
    }

    /// Every test segment must carry a label.
    pub fn validate(&self) -> Result<()> {
        for (split, seg) in &self.items {
            if *split == Split::Test && seg.label.is_none() {
                return Err(Error::invalid(format!(
                    "test segment of patient {} at {} has no label",
                    seg.patient_id, seg.start_index
                )));
            }
        }
        Ok(())
    }
}

/// Converts a duration to a whole number of samples.
pub fn seconds_to_samples(seconds: f64, fs_hz: f64) -> usize {
    (seconds * fs_hz).round() as usize
}

/// Cuts a signal into fixed windows; trailing partial windows are dropped.
pub fn segment_signal(signal: &Signal, window_s: f64, stride_s: f64) -> Result<Vec<Segment>> {
    if !(window_s > 0.0) || !(stride_s > 0.0) {
        return Err(Error::invalid(format!(
            "window and stride must be positive (window {window_s} s, stride {stride_s} s)"
        )));
    }
    if let Some(i) = signal.samples.iter().position(|v| v.is_nan()) {
        return Err(Error::invalid(format!(
            "signal {} contains NaN at sample {i}; segmentation requires a raw signal",
            signal.patient_id
        )));
    }
    let w = seconds_to_samples(window_s, signal.fs_hz);
    let s = seconds_to_samples(stride_s, signal.fs_hz);
    if w == 0 || s == 0 {
        return Err(Error::invalid("window or stride shorter than one sample"));
    }
    let n = signal.len();
    if n < w {
        return Ok(Vec::new());
    }
    let count = (n - w) / s + 1;
    Ok((0..count)
        .map(|k| {
            let start = k * s;
            Segment {
                values: signal.samples[start..start + w].to_vec(),
                fs_hz: signal.fs_hz,
                duration_s: window_s,
                modality: signal.modality,
                patient_id: signal.patient_id.clone(),
                label: None,
                start_index: start,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalFormat {
    Csv,
    RawF32,
}

impl SignalFormat {
    /// Guesses the format from a file extension (`.csv` or `.f32`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(SignalFormat::Csv),
            "f32" => Some(SignalFormat::RawF32),
            _ => None,
        }
    }
}

/// Sidecar metadata accompanying a raw `.f32` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub fs_hz: f64,
    pub modality: Modality,
    pub patient_id: String,
    pub n: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn read_signal(path: &Path, format: SignalFormat) -> Result<Signal> {
    match format {
        SignalFormat::Csv => read_csv(path),
        SignalFormat::RawF32 => read_raw(path),
    }
}

pub fn write_signal(signal: &Signal, path: &Path, format: SignalFormat) -> Result<()> {
    if signal.samples.is_empty() {
        return Err(Error::invalid("empty signal"));
    }
    if !(signal.fs_hz > 0.0) {
        return Err(Error::invalid(format!("sample rate must be positive, got {}", signal.fs_hz)));
    }
    match format {
        SignalFormat::Csv => write_csv(signal, path),
        SignalFormat::RawF32 => write_raw(signal, path),
    }
}

fn read_raw(path: &Path) -> Result<Signal> {
    let side_path = sidecar_path(path);
    let side_text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let side: Sidecar = serde_json::from_str(&side_text)
        .map_err(|e| Error::parse(side_path.display().to_string(), e.to_string()))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != side.n * 4 {
        return Err(Error::parse(
            path.display().to_string(),
            format!(
                "sidecar declares n = {} samples but file holds {} bytes",
                side.n,
                bytes.len()
            ),
        ));
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Signal::new(samples, side.fs_hz, side.modality, side.patient_id)
        .map_err(|e| Error::parse(side_path.display().to_string(), e.to_string()))
}

fn write_raw(signal: &Signal, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(signal.len() * 4);
    for &v in &signal.samples {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = Sidecar {
        fs_hz: signal.fs_hz,
        modality: signal.modality,
        patient_id: signal.patient_id.clone(),
        n: signal.len(),
    };
    let side_path = sidecar_path(path);
    let text = serde_json::to_string_pretty(&side).expect("sidecar serializes");
    fs::write(&side_path, text).map_err(|e| Error::io(&side_path, e))
}

fn read_csv(path: &Path) -> Result<Signal> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(format!("{name}:1"), "missing header")),
    };
    if header.trim() != "t_seconds,value" {
        return Err(Error::parse(
            format!("{name}:1"),
            format!("malformed header {:?}, expected \"t_seconds,value\"", header.trim()),
        ));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (t, v) = match (fields.next(), fields.next(), fields.next()) {
            (Some(t), Some(v), None) => (t.trim(), v.trim()),
            _ => {
                return Err(Error::parse(
                    format!("{name}:{lineno}"),
                    "expected two comma-separated fields",
                ))
            }
        };
        let t: f64 = t
            .parse()
            .map_err(|_| Error::parse(format!("{name}:{lineno}"), format!("bad t_seconds {t:?}")))?;
        let v: f64 = v
            .parse()
            .map_err(|_| Error::parse(format!("{name}:{lineno}"), format!("bad value {v:?}")))?;
        times.push(t);
        values.push(v);
    }
    if values.len() < 2 {
        return Err(Error::parse(
            name,
            "need at least two rows to infer the sample rate",
        ));
    }
    // Line numbers below are of the later row of each pair.
    for (i, pair) in times.windows(2).enumerate() {
        if !(pair[1] > pair[0]) {
            return Err(Error::parse(
                format!("{name}:{}", i + 3),
                "non-monotone time column",
            ));
        }
    }
    let first_dt = times[1] - times[0];
    for (i, pair) in times.windows(2).enumerate() {
        let dt = pair[1] - pair[0];
        let lineno = i + 3;
        if ((dt - first_dt) / first_dt).abs() > CSV_DT_TOLERANCE {
            return Err(Error::parse(
                format!("{name}:{lineno}"),
                "non-uniform sampling",
            ));
        }
    }
    let mean_dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    // Snap to a micro-hertz grid so that 120 Hz reads back as exactly 120.
    let fs_hz = ((1.0 / mean_dt) * 1e6).round() / 1e6;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("unknown")
        .to_string();
    let (modality, patient_id) = match fs::read_to_string(sidecar_path(path)) {
        Ok(text) => {
            let side: Sidecar = serde_json::from_str(&text).map_err(|e| {
                Error::parse(sidecar_path(path).display().to_string(), e.to_string())
            })?;
            (side.modality, side.patient_id)
        }
        Err(_) => (Modality::Abp, stem),
    };
    Signal::new(values, fs_hz, modality, patient_id)
}

fn write_csv(signal: &Signal, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "t_seconds,value").map_err(io)?;
    for (i, v) in signal.samples.iter().enumerate() {
        let t = i as f64 / signal.fs_hz;
        if v.is_nan() {
            writeln!(w, "{t},NaN").map_err(io)?;
        } else {
            writeln!(w, "{t},{v}").map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
