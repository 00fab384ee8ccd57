//! End-to-end scoring, threshold calibration, classification and cleaning.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dsp::{fit_length, resample, revin_denormalize, revin_normalize, revin_stats, RevinStats, DEFAULT_EPS};
use crate::error::{Error, Result};
use crate::eval::nearest_rank_percentile;
use crate::heuristics::{apply_heuristics, HeuristicConfig, HeuristicReason, HeuristicVerdict};
use crate::scalar::Scalar;
use crate::signal::{segment_signal, Segment, Signal, SEGMENT_SECONDS};
use crate::vae::{self, CheckpointMeta, LatentVector, TrainConfig, TrainReport, VaeArchitecture, VaeModel};

/// Largest resampled-length error absorbed by edge crop/pad.
pub const FIT_TOLERANCE: usize = 2;

/// Fewest validation segments accepted for threshold calibration.
pub const MIN_CALIBRATION_SEGMENTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMetric {
    #[default]
    Mse,
    Mae,
}

impl std::str::FromStr for ScoreMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(Self::Mse),
            "mae" => Ok(Self::Mae),
            other => Err(Error::invalid(format!("unknown score metric {other:?}, expected mse or mae"))),
        }
    }
}

impl std::fmt::Display for ScoreMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mse => "mse",
            Self::Mae => "mae",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub fs_target_hz: f64,
    pub eps: f64,
    pub score_metric: ScoreMetric,
    pub threshold_percentile: f64,
    pub enable_revin: bool,
    pub enable_freq_adapter: bool,
    pub enable_heuristics: bool,
    pub heuristics: HeuristicConfig,
    pub window_s: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            fs_target_hz: 120.0,
            eps: DEFAULT_EPS,
            score_metric: ScoreMetric::Mse,
            threshold_percentile: 90.0,
            enable_revin: true,
            enable_freq_adapter: true,
            enable_heuristics: true,
            heuristics: HeuristicConfig::default(),
            window_s: SEGMENT_SECONDS,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_percentile > 0.0 && self.threshold_percentile <= 100.0) {
            return Err(Error::invalid(format!(
                "threshold_percentile must lie in (0, 100], got {}",
                self.threshold_percentile
            )));
        }
        if !(self.fs_target_hz > 0.0 && self.fs_target_hz.is_finite()) {
            return Err(Error::invalid(format!("fs_target_hz must be positive, got {}", self.fs_target_hz)));
        }
        if !(self.eps > 0.0) || !(self.window_s > 0.0) {
            return Err(Error::invalid("eps and window_s must be positive"));
        }
        Ok(())
    }

    pub fn to_meta(&self, threshold: Option<f64>) -> CheckpointMeta {
        CheckpointMeta {
            fs_target_hz: self.fs_target_hz,
            eps: self.eps,
            threshold,
            score_metric: self.score_metric,
            threshold_percentile: self.threshold_percentile,
            enable_revin: self.enable_revin,
            enable_freq_adapter: self.enable_freq_adapter,
            enable_heuristics: self.enable_heuristics,
        }
    }

    /// Restores the stored settings; heuristic limits and window come from `self`.
    pub fn with_meta(mut self, meta: &CheckpointMeta) -> Self {
        self.fs_target_hz = meta.fs_target_hz;
        self.eps = meta.eps;
        self.score_metric = meta.score_metric;
        self.threshold_percentile = meta.threshold_percentile;
        self.enable_revin = meta.enable_revin;
        self.enable_freq_adapter = meta.enable_freq_adapter;
        self.enable_heuristics = meta.enable_heuristics;
        self
    }
}

/// Brings a segment to the model's rate and length.
///
/// With the adapter enabled a segment at another rate is resampled to
/// `fs_target_hz`; the result may miss `input_len` by at most
/// [`FIT_TOLERANCE`] samples. With it disabled the samples are cropped or
/// padded to `input_len` as they are.
pub fn adapt_input(values: &[f64], fs_hz: f64, config: &DetectorConfig, input_len: usize) -> Result<Vec<f64>> {
    let adapted = if config.enable_freq_adapter && fs_hz != config.fs_target_hz {
        resample(values, fs_hz, config.fs_target_hz)?
    } else {
        values.to_vec()
    };
    if config.enable_freq_adapter && adapted.len().abs_diff(input_len) > FIT_TOLERANCE {
        return Err(Error::shape(format!(
            "segment of {} samples at {fs_hz} Hz gives {} samples at {} Hz, model expects {input_len}",
            values.len(),
            adapted.len(),
            config.fs_target_hz
        )));
    }
    Ok(fit_length(&adapted, input_len))
}

/// Model-space input and the statistics needed to invert it.
fn model_input(values: &[f64], config: &DetectorConfig) -> (Vec<f64>, Option<RevinStats>) {
    if config.enable_revin {
        let stats = revin_stats(values, config.eps);
        (revin_normalize(values, &stats), Some(stats))
    } else {
        (values.to_vec(), None)
    }
}

/// Mean squared or absolute difference.
pub fn reconstruction_score(x: &[f64], recon: &[f64], metric: ScoreMetric) -> f64 {
    let n = x.len() as f64;
    let total: f64 = x
        .iter()
        .zip(recon)
        .map(|(a, b)| match metric {
            ScoreMetric::Mse => (a - b).powi(2),
            ScoreMetric::Mae => (a - b).abs(),
        })
        .sum();
    total / n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentScore {
    pub score: f64,
    /// Reconstruction at the segment's native rate and length.
    pub decoded: Vec<f64>,
    pub latent: LatentVector,
}

/// Scores one segment by its reconstruction error in model space.
pub fn score_segment<T: Scalar>(model: &VaeModel<T>, config: &DetectorConfig, segment: &Segment) -> Result<SegmentScore> {
    let input_len = model.arch().input_len;
    let adapted = adapt_input(&segment.values, segment.fs_hz, config, input_len)?;
    let (x, stats) = model_input(&adapted, config);
    let xt: Vec<T> = x.iter().map(|&v| T::of(v)).collect();
    let zeros = vec![T::zero(); model.arch().latent_dim];
    let out = model.forward(&xt, &zeros)?;
    let recon: Vec<f64> = out.recon.iter().map(|v| v.as_f64()).collect();
    let score = reconstruction_score(&x, &recon, config.score_metric);

    let restored = match &stats {
        Some(s) => revin_denormalize(&recon, s),
        None => recon,
    };
    let native = if config.enable_freq_adapter && segment.fs_hz != config.fs_target_hz {
        resample(&restored, config.fs_target_hz, segment.fs_hz)?
    } else {
        restored
    };
    let to_f64 = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
    let mu = to_f64(&out.mu);
    Ok(SegmentScore {
        score,
        decoded: fit_length(&native, segment.len()),
        latent: LatentVector {
            z: mu.clone(),
            mu,
            logvar: to_f64(&out.logvar),
        },
    })
}

/// Nearest-rank percentile of the validation scores.
pub fn calibrate_threshold<T: Scalar>(model: &VaeModel<T>, config: &DetectorConfig, validation: &[Segment]) -> Result<f64> {
    config.validate()?;
    if validation.len() < MIN_CALIBRATION_SEGMENTS {
        return Err(Error::invalid(format!(
            "threshold calibration needs at least {MIN_CALIBRATION_SEGMENTS} validation segments, got {}",
            validation.len()
        )));
    }
    let scores = validation
        .iter()
        .map(|s| score_segment(model, config, s).map(|r| r.score))
        .collect::<Result<Vec<_>>>()?;
    nearest_rank_percentile(&scores, config.threshold_percentile)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentVerdict {
    /// `+inf` when the heuristics reject the segment.
    pub score: f64,
    pub is_artifact: bool,
    pub heuristic: HeuristicVerdict,
    pub decoded: Vec<f64>,
    pub latent: LatentVector,
    pub processing_ns: u64,
}

/// A trained model with its configuration and decision threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedDetector<T> {
    pub model: VaeModel<T>,
    pub config: DetectorConfig,
    threshold: f64,
}

impl<T: Scalar> CalibratedDetector<T> {
    pub fn new(model: VaeModel<T>, config: DetectorConfig, threshold: f64) -> Result<Self> {
        config.validate()?;
        if !(threshold.is_finite() && threshold >= 0.0) {
            return Err(Error::invalid(format!("threshold must be finite and non-negative, got {threshold}")));
        }
        Ok(Self {
            model,
            config,
            threshold,
        })
    }

    /// Calibrates the threshold on `validation` and wraps the model.
    pub fn calibrate(model: VaeModel<T>, config: DetectorConfig, validation: &[Segment]) -> Result<Self> {
        let threshold = calibrate_threshold(&model, &config, validation)?;
        Self::new(model, config, threshold)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Same model and settings with another threshold.
    pub fn with_threshold(&self, threshold: f64) -> Result<Self> {
        Self::new(self.model.clone(), self.config, threshold)
    }

    pub fn score(&self, segment: &Segment) -> Result<SegmentScore> {
        score_segment(&self.model, &self.config, segment)
    }

    /// Artifact iff a heuristic fails (when enabled) or the score exceeds
    /// the threshold.
    pub fn classify(&self, segment: &Segment) -> Result<SegmentVerdict> {
        let start = Instant::now();
        let heuristic = if self.config.enable_heuristics {
            apply_heuristics(segment, &self.config.heuristics)
        } else {
            HeuristicVerdict::pass()
        };
        let scored = self.score(segment)?;
        let score = if !heuristic.passed || scored.score.is_nan() {
            f64::INFINITY
        } else {
            scored.score
        };
        let is_artifact = !heuristic.passed || score > self.threshold;
        Ok(SegmentVerdict {
            score,
            is_artifact,
            heuristic,
            decoded: scored.decoded,
            latent: scored.latent,
            processing_ns: start.elapsed().as_nanos() as u64,
        })
    }

    pub fn meta(&self) -> CheckpointMeta {
        self.config.to_meta(Some(self.threshold))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        vae::save_checkpoint(&self.model, &self.meta(), path)
    }
}

impl CalibratedDetector<f32> {
    /// Loads a checkpoint that carries a threshold. Heuristic limits and the
    /// window length come from `base`.
    pub fn load(path: &std::path::Path, base: DetectorConfig) -> Result<Self> {
        let (model, meta) = vae::load_checkpoint(path)?;
        let threshold = meta.threshold.ok_or_else(|| {
            Error::Checkpoint(format!("{}: checkpoint has no calibrated threshold", path.display()))
        })?;
        Self::new(model, base.with_meta(&meta), threshold)
    }
}

/// Cleaned signal plus one verdict per judged window.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanOutput {
    pub cleaned: Signal,
    pub verdicts: Vec<(Segment, SegmentVerdict)>,
    /// Trailing samples shorter than one window, copied through unjudged.
    pub unjudged_tail: usize,
}

impl CleanOutput {
    pub fn artifact_count(&self) -> usize {
        self.verdicts.iter().filter(|(_, v)| v.is_artifact).count()
    }
}

/// Replaces every artifact window with NaN and keeps all other samples.
pub fn clean_signal<T: Scalar>(detector: &CalibratedDetector<T>, signal: &Signal) -> Result<CleanOutput> {
    let window = detector.config.window_s;
    let segments = segment_signal(signal, window, window)?;
    if segments.is_empty() {
        return Err(Error::invalid(format!(
            "signal {} of {:.3} s is too short to clean (window {window} s)",
            signal.patient_id,
            signal.duration_s()
        )));
    }
    let mut cleaned = signal.clone();
    let mut verdicts = Vec::with_capacity(segments.len());
    let mut covered = 0;
    for seg in segments {
        let verdict = detector.classify(&seg)?;
        let end = seg.start_index + seg.len();
        if verdict.is_artifact {
            cleaned.samples[seg.start_index..end].fill(f64::NAN);
        }
        covered = covered.max(end);
        verdicts.push((seg, verdict));
    }
    Ok(CleanOutput {
        cleaned,
        verdicts,
        unjudged_tail: signal.len() - covered,
    })
}

/// One line of the verdict log. Infinite scores serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub patient_id: String,
    pub start_index: usize,
    pub fs_hz: f64,
    pub score: Option<f64>,
    pub is_artifact: bool,
    pub heuristic_reasons: Vec<HeuristicReason>,
    pub processing_ns: u64,
    pub latent: Vec<f64>,
}

impl VerdictRecord {
    pub fn new(segment: &Segment, verdict: &SegmentVerdict) -> Self {
        Self {
            patient_id: segment.patient_id.clone(),
            start_index: segment.start_index,
            fs_hz: segment.fs_hz,
            score: verdict.score.is_finite().then_some(verdict.score),
            is_artifact: verdict.is_artifact,
            heuristic_reasons: verdict.heuristic.reasons.clone(),
            processing_ns: verdict.processing_ns,
            latent: verdict.latent.mu.clone(),
        }
    }
}

/// Counts from the training pipeline of [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub train_used: usize,
    pub train_rejected: usize,
    pub val_used: usize,
    pub val_rejected: usize,
    pub threshold: f64,
    pub report: TrainReport,
}

fn passes(config: &DetectorConfig, segment: &Segment) -> bool {
    !config.enable_heuristics || apply_heuristics(segment, &config.heuristics).passed
}

/// Segments the heuristics let through to training and calibration.
pub fn usable_segments(config: &DetectorConfig, segments: &[Segment]) -> Vec<Segment> {
    segments.iter().filter(|s| passes(config, s)).cloned().collect()
}

/// Heuristic filtering, label-free training and threshold calibration.
pub fn fit(
    train_segments: &[Segment],
    val_segments: &[Segment],
    arch: &VaeArchitecture,
    config: &DetectorConfig,
    train_cfg: &TrainConfig,
) -> Result<(CalibratedDetector<f32>, FitSummary)> {
    fit_with(train_segments, val_segments, arch, config, train_cfg, |_| {})
}

pub fn fit_with(
    train_segments: &[Segment],
    val_segments: &[Segment],
    arch: &VaeArchitecture,
    config: &DetectorConfig,
    train_cfg: &TrainConfig,
    on_epoch: impl FnMut(&vae::EpochLosses),
) -> Result<(CalibratedDetector<f32>, FitSummary)> {
    config.validate()?;
    let train_kept: Vec<&Segment> = train_segments.iter().filter(|s| passes(config, s)).collect();
    let val_kept = usable_segments(config, val_segments);
    let adapt = |s: &Segment| adapt_input(&s.values, s.fs_hz, config, arch.input_len);
    let train_x = train_kept.iter().map(|s| adapt(s)).collect::<Result<Vec<_>>>()?;
    let val_x = val_kept.iter().map(adapt).collect::<Result<Vec<_>>>()?;
    let cfg = TrainConfig {
        normalize: config.enable_revin,
        eps: config.eps,
        ..*train_cfg
    };
    let (model, report) = vae::train_with::<f32>(&train_x, &val_x, arch, &cfg, on_epoch)?;
    let detector = CalibratedDetector::calibrate(model, *config, &val_kept)?;
    let summary = FitSummary {
        train_used: train_kept.len(),
        train_rejected: train_segments.len() - train_kept.len(),
        val_used: val_kept.len(),
        val_rejected: val_segments.len() - val_kept.len(),
        threshold: detector.threshold(),
        report,
    };
    Ok((detector, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Modality;
    use std::f64::consts::PI;

    fn beat_like(fs: f64, len: usize) -> Vec<f64> {
        (0..len)
            .map(|i| {
                let t = i as f64 / fs;
                90.0 + 20.0 * (2.0 * PI * 1.2 * t).sin() + 5.0 * (2.0 * PI * 2.4 * t).sin()
            })
            .collect()
    }

    fn detector(threshold: f64) -> CalibratedDetector<f32> {
        let model = VaeModel::new(VaeArchitecture::default(), 1).unwrap();
        CalibratedDetector::new(model, DetectorConfig::default(), threshold).unwrap()
    }

    #[test]
    fn score_arithmetic() {
        let x = vec![0.3; 1200];
        assert_eq!(reconstruction_score(&x, &x, ScoreMetric::Mse), 0.0);
        let off: Vec<f64> = x.iter().map(|v| v + 0.1).collect();
        assert!((reconstruction_score(&x, &off, ScoreMetric::Mse) - 0.01).abs() < 1e-12);
        assert!((reconstruction_score(&x, &off, ScoreMetric::Mae) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn native_length_is_restored() {
        let d = detector(1.0);
        for (fs, n) in [(125.0, 1250), (175.0, 1750), (50.0, 500), (120.0, 1200)] {
            let seg = Segment::from_values(beat_like(fs, n), fs, Modality::Abp);
            let s = d.score(&seg).unwrap();
            assert_eq!(s.decoded.len(), n);
            assert_eq!(s.latent.mu.len(), 20);
            assert!(s.score.is_finite() && s.score >= 0.0);
        }
    }

    #[test]
    fn heuristic_failure_forces_artifact() {
        let d = detector(1e9);
        let mut v = beat_like(120.0, 1200);
        v[10] = -5.0;
        let verdict = d.classify(&Segment::from_values(v, 120.0, Modality::Abp)).unwrap();
        assert!(verdict.is_artifact);
        assert_eq!(verdict.score, f64::INFINITY);
        assert_eq!(verdict.heuristic.reasons, vec![HeuristicReason::RangeViolation]);
    }

    #[test]
    fn threshold_comparison_is_strict() {
        let seg = Segment::from_values(beat_like(120.0, 1200), 120.0, Modality::Abp);
        let score = detector(0.0).score(&seg).unwrap().score;
        assert!(!detector(score).classify(&seg).unwrap().is_artifact);
        assert!(detector(score * 0.999).classify(&seg).unwrap().is_artifact);
    }

    #[test]
    fn affine_change_barely_moves_score() {
        let d = detector(1.0);
        let v = beat_like(120.0, 1200);
        let base = d.score(&Segment::from_values(v.clone(), 120.0, Modality::Abp)).unwrap().score;
        let moved: Vec<f64> = v.iter().map(|x| 1.7 * x - 20.0).collect();
        let other = d.score(&Segment::from_values(moved, 120.0, Modality::Abp)).unwrap().score;
        assert!((base - other).abs() <= 1e-6 * base, "{base} vs {other}");
    }

    #[test]
    fn calibration_rules() {
        let model = VaeModel::<f32>::new(VaeArchitecture::default(), 1).unwrap();
        let segs: Vec<Segment> = (0..12)
            .map(|k| Segment::from_values(beat_like(120.0 + k as f64, 1200 + 10 * k), 120.0 + k as f64, Modality::Abp))
            .collect();
        let cfg = DetectorConfig::default();
        let t90 = calibrate_threshold(&model, &cfg, &segs).unwrap();
        let all: Vec<f64> = segs.iter().map(|s| score_segment(&model, &cfg, s).unwrap().score).collect();
        assert_eq!(t90, nearest_rank_percentile(&all, 90.0).unwrap());
        let t100 = calibrate_threshold(&model, &DetectorConfig { threshold_percentile: 100.0, ..cfg }, &segs).unwrap();
        assert_eq!(t100, all.iter().cloned().fold(f64::MIN, f64::max));
        assert!(calibrate_threshold(&model, &cfg, &segs[..5]).is_err());
        assert!(calibrate_threshold(&model, &cfg, &[]).is_err());
    }

    #[test]
    fn cleaning_masks_whole_windows() {
        let v = beat_like(120.0, 3600 + 50);
        let signal = Signal::new(v.clone(), 120.0, Modality::Abp, "p").unwrap();
        let keep_all = detector(1e12);
        let out = clean_signal(&keep_all, &signal).unwrap();
        assert_eq!(out.verdicts.len(), 3);
        assert_eq!(out.unjudged_tail, 50);
        assert!(out.cleaned.samples.iter().zip(&v).all(|(a, b)| a.to_bits() == b.to_bits()));

        let mut flushed = v.clone();
        flushed[1200..2400].fill(300.0);
        let signal = Signal::new(flushed.clone(), 120.0, Modality::Abp, "p").unwrap();
        let out = clean_signal(&keep_all, &signal).unwrap();
        let nan = out.cleaned.samples.iter().filter(|x| x.is_nan()).count();
        assert_eq!(nan, 1200 * out.artifact_count());
        assert!(out.cleaned.samples[1200..2400].iter().all(|x| x.is_nan()));
        assert_eq!(&out.cleaned.samples[..1200], &flushed[..1200]);

        let short = Signal::new(v[..600].to_vec(), 120.0, Modality::Abp, "p").unwrap();
        let err = clean_signal(&keep_all, &short).unwrap_err().to_string();
        assert!(err.contains("too short to clean"), "{err}");
    }

    #[test]
    fn verdict_record_writes_null_for_infinite_score() {
        let d = detector(1.0);
        let mut v = beat_like(120.0, 1200);
        v[0] = 400.0;
        let seg = Segment::from_values(v, 120.0, Modality::Abp);
        let rec = VerdictRecord::new(&seg, &d.classify(&seg).unwrap());
        let line = serde_json::to_string(&rec).unwrap();
        assert!(line.contains("\"score\":null"), "{line}");
        assert!(line.contains("range_violation"));
    }
}
