//! Streaming simulation with latency and compute metering.
//!
//! An ingest thread releases samples in arrival order and hands each
//! completed window to the scoring path through a bounded queue. Verdicts
//! come out in window order.

use std::sync::mpsc::sync_channel;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::detector::{CalibratedDetector, SegmentVerdict};
use crate::error::{Error, Result};
use crate::eval::{metrics, nearest_rank_percentile, Confusion, Metrics};
use crate::scalar::Scalar;
use crate::signal::{seconds_to_samples, Segment, Signal};
use crate::vae::{ConvSpec, VaeArchitecture};

/// Completed windows that may wait for scoring before ingest blocks.
pub const QUEUE_DEPTH: usize = 4;

/// Sample rates swept by [`frequency_sweep`].
pub const SWEEP_RATES_HZ: [f64; 9] = [50.0, 75.0, 100.0, 120.0, 125.0, 150.0, 175.0, 200.0, 240.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pace {
    /// Samples are released at the signal's sample rate in wall time.
    Realtime,
    Unpaced,
}

impl std::str::FromStr for Pace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "realtime" => Ok(Pace::Realtime),
            "unpaced" => Ok(Pace::Unpaced),
            other => Err(Error::parse("pace", format!("unknown pace {other:?}, expected realtime or unpaced"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LatencyNs {
    pub p50: u64,
    pub p95: u64,
    pub max: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamStats {
    pub segments_processed: usize,
    /// From window completion to verdict emission.
    pub latency_ns: LatencyNs,
    pub data_seconds: f64,
    pub wall_seconds: f64,
    /// Data seconds per wall second.
    pub realtime_factor: f64,
    pub flops_per_segment: u64,
    /// Growth of the resident set high-water mark during the run. Read from
    /// `/proc/self/status`; platform specific and absent elsewhere.
    pub peak_extra_memory_bytes: Option<u64>,
}

fn proc_status_kb(key: &str) -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with(key))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn latency_summary(latencies: &[u64]) -> LatencyNs {
    if latencies.is_empty() {
        return LatencyNs::default();
    }
    let as_f64: Vec<f64> = latencies.iter().map(|&v| v as f64).collect();
    let rank = |p| nearest_rank_percentile(&as_f64, p).map_or(0, |v| v as u64);
    LatencyNs {
        p50: rank(50.0),
        p95: rank(95.0),
        max: latencies.iter().copied().max().unwrap_or(0),
    }
}

/// Streams `signal` through `detector` in non-overlapping windows, calling
/// `emit` with each verdict in window order. A trailing partial window is
/// consumed but not judged.
pub fn run_stream<T: Scalar>(
    signal: &Signal,
    detector: &CalibratedDetector<T>,
    pace: Pace,
    mut emit: impl FnMut(&Segment, &SegmentVerdict) -> Result<()>,
) -> Result<StreamStats> {
    let window = seconds_to_samples(detector.config.window_s, signal.fs_hz);
    if window == 0 || signal.len() < window {
        return Err(Error::invalid(format!(
            "signal has {} samples, shorter than one {} s window ({window} samples)",
            signal.len(),
            detector.config.window_s
        )));
    }
    let rss_before = proc_status_kb("VmHWM:");
    let fs = signal.fs_hz;
    // Release granularity for paced ingest.
    let chunk = ((fs / 100.0).ceil() as usize).max(1);
    let (tx, rx) = sync_channel::<(Segment, Instant)>(QUEUE_DEPTH);
    let start = Instant::now();
    let mut latencies = Vec::new();

    thread::scope(|scope| -> Result<()> {
        scope.spawn(move || {
            let mut buf = Vec::with_capacity(window);
            let mut window_start = 0;
            let mut released = 0;
            while released < signal.len() {
                let next = (released + chunk).min(signal.len());
                if pace == Pace::Realtime {
                    let due = start + Duration::from_secs_f64(next as f64 / fs);
                    if let Some(wait) = due.checked_duration_since(Instant::now()) {
                        thread::sleep(wait);
                    }
                }
                for &v in &signal.samples[released..next] {
                    buf.push(v);
                    if buf.len() == window {
                        let values = std::mem::replace(&mut buf, Vec::with_capacity(window));
                        let segment = Segment {
                            values,
                            fs_hz: fs,
                            duration_s: window as f64 / fs,
                            modality: signal.modality,
                            patient_id: signal.patient_id.clone(),
                            label: None,
                            start_index: window_start,
                        };
                        window_start += window;
                        if tx.send((segment, Instant::now())).is_err() {
                            return;
                        }
                    }
                }
                released = next;
            }
        });
        for (segment, completed) in rx.iter() {
            let verdict = detector.classify(&segment)?;
            emit(&segment, &verdict)?;
            latencies.push(completed.elapsed().as_nanos() as u64);
        }
        Ok(())
    })?;

    let wall_seconds = start.elapsed().as_secs_f64();
    let data_seconds = signal.len() as f64 / fs;
    let peak_extra_memory_bytes = match (rss_before, proc_status_kb("VmHWM:")) {
        (Some(a), Some(b)) => Some(b.saturating_sub(a) * 1024),
        _ => None,
    };
    Ok(StreamStats {
        segments_processed: latencies.len(),
        latency_ns: latency_summary(&latencies),
        data_seconds,
        wall_seconds,
        realtime_factor: data_seconds / wall_seconds.max(f64::MIN_POSITIVE),
        flops_per_segment: estimate_flops(detector.model.arch()).total,
        peak_extra_memory_bytes,
    })
}

/// Inference cost of one segment, split by layer kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlopEstimate {
    pub conv: u64,
    pub dense: u64,
    pub activation: u64,
    pub total: u64,
}

/// Multiply-adds of a convolution producing `out_len` positions, counted
/// as two FLOPs each.
pub fn conv_flops(spec: &ConvSpec, out_len: usize) -> u64 {
    2 * (out_len * spec.out_ch * spec.in_ch * spec.kernel) as u64
}

pub fn dense_flops(inputs: usize, outputs: usize) -> u64 {
    2 * (inputs * outputs) as u64
}

/// Analytic inference FLOPs for one segment.
///
/// A transposed convolution performs the same multiply-adds as the
/// convolution it is the adjoint of, so it is charged at its input length.
/// Hidden layers add one FLOP per activated value; the output layer and the
/// latent heads are linear.
pub fn estimate_flops(arch: &VaeArchitecture) -> FlopEstimate {
    let mut est = FlopEstimate::default();
    for (spec, out_len) in arch.encoder.iter().zip(arch.encoder_lengths()) {
        est.conv += conv_flops(spec, out_len);
        est.activation += (out_len * spec.out_ch) as u64;
    }
    let flat = arch.flat_dim();
    est.dense += 2 * dense_flops(flat, arch.latent_dim);
    let projected = arch.decoder_flat_dim();
    est.dense += dense_flops(arch.latent_dim, projected);
    est.activation += projected as u64;
    let mut len = arch.bottleneck_len();
    for (i, spec) in arch.decoder.iter().enumerate() {
        est.conv += conv_flops(spec, len);
        len *= spec.stride;
        if i + 1 < arch.decoder.len() {
            est.activation += (len * spec.out_ch) as u64;
        }
    }
    est.total = est.conv + est.dense + est.activation;
    est
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fs_hz: f64,
    pub segments: usize,
    pub metrics: Metrics,
    pub mean_processing_ns: f64,
}

/// Resamples labeled segments to each rate and classifies them with one
/// fixed detector.
pub fn frequency_sweep<T: Scalar>(detector: &CalibratedDetector<T>, segments: &[Segment], rates_hz: &[f64]) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(rates_hz.len());
    for &fs in rates_hz {
        let mut confusion = Confusion::default();
        let mut total_ns = 0u128;
        for seg in segments {
            let label = seg
                .label
                .ok_or_else(|| Error::invalid(format!("segment {} of {} has no label", seg.start_index, seg.patient_id)))?;
            let values = crate::dsp::resample(&seg.values, seg.fs_hz, fs)?;
            let resampled = Segment {
                duration_s: values.len() as f64 / fs,
                values,
                fs_hz: fs,
                ..seg.clone()
            };
            let verdict = detector.classify(&resampled)?;
            total_ns += u128::from(verdict.processing_ns);
            confusion.record(label, verdict.is_artifact);
        }
        out.push(SweepPoint {
            fs_hz: fs,
            segments: segments.len(),
            metrics: metrics(&confusion)?,
            mean_processing_ns: total_ns as f64 / segments.len().max(1) as f64,
        });
    }
    Ok(out)
}

/// Accuracy at `fs_hz` from a sweep, if that rate was included.
pub fn sweep_accuracy(points: &[SweepPoint], fs_hz: f64) -> Option<f64> {
    points.iter().find(|p| p.fs_hz == fs_hz).map(|p| p.metrics.accuracy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::DetectorConfig;
    use crate::signal::Modality;
    use crate::synth::{synth_patient, PatientProfile};
    use crate::vae::VaeModel;

    fn detector() -> CalibratedDetector<f32> {
        let model = VaeModel::new(VaeArchitecture::default(), 3).unwrap();
        CalibratedDetector::new(model, DetectorConfig::default(), 1.0).unwrap()
    }

    fn signal(seconds: f64) -> Signal {
        let profile = PatientProfile {
            map_mmhg: 85.0,
            pulse_pressure_mmhg: 40.0,
            hr_bpm: 70.0,
            notch_depth: 0.5,
            resp_rate_hz: 0.25,
            drift_scale: 2.0,
            seed: 11,
        };
        synth_patient(&profile, seconds, 125.0).unwrap().0
    }

    #[test]
    fn first_conv_layer_flops() {
        assert_eq!(conv_flops(&ConvSpec::new(1, 8, 9, 2), 600), 86_400);
    }

    #[test]
    fn default_flops_in_band() {
        let est = estimate_flops(&VaeArchitecture::default());
        assert!((1e6..=1e7).contains(&(est.total as f64)), "{est:?}");
        assert_eq!(est.total, est.conv + est.dense + est.activation);
    }

    #[test]
    fn dense_flops_scale_with_latent_dim() {
        let a = estimate_flops(&VaeArchitecture::default());
        let b = estimate_flops(&VaeArchitecture::default().with_latent_dim(40));
        assert_eq!(b.dense, 2 * a.dense);
        assert_eq!(b.conv, a.conv);
        assert_eq!(b.activation, a.activation);
    }

    #[test]
    fn stream_matches_batch_in_order() {
        let det = detector();
        let sig = signal(35.0);
        let mut seen = Vec::new();
        let stats = run_stream(&sig, &det, Pace::Unpaced, |seg, v| {
            seen.push((seg.start_index, v.score.to_bits(), v.is_artifact));
            Ok(())
        })
        .unwrap();
        assert_eq!(stats.segments_processed, 3);
        assert_eq!(seen.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 1250, 2500]);
        let batch = crate::detector::clean_signal(&det, &sig).unwrap();
        for ((start, bits, flag), (seg, v)) in seen.iter().zip(&batch.verdicts) {
            assert_eq!(*start, seg.start_index);
            assert_eq!(*bits, v.score.to_bits());
            assert_eq!(*flag, v.is_artifact);
        }
        let l = stats.latency_ns;
        assert!(l.p50 <= l.p95 && l.p95 <= l.max);
        assert!(stats.realtime_factor > 0.0);
    }

    #[test]
    fn realtime_pacing_tracks_wall_clock() {
        let det = detector();
        let stats = run_stream(&signal(20.0), &det, Pace::Realtime, |_, _| Ok(())).unwrap();
        assert_eq!(stats.segments_processed, 2);
        assert!((stats.realtime_factor - 1.0).abs() <= 0.05, "{}", stats.realtime_factor);
    }

    #[test]
    fn short_source_is_rejected() {
        let det = detector();
        let sig = Signal::new(vec![80.0; 100], 125.0, Modality::Abp, "p").unwrap();
        assert!(run_stream(&sig, &det, Pace::Unpaced, |_, _| Ok(())).is_err());
    }

    #[test]
    fn pace_parses() {
        assert_eq!("realtime".parse::<Pace>().unwrap(), Pace::Realtime);
        assert_eq!("unpaced".parse::<Pace>().unwrap(), Pace::Unpaced);
        assert!("fast".parse::<Pace>().is_err());
    }

    #[test]
    fn nearest_rank_latency() {
        let l = latency_summary(&[5, 1, 4, 2, 3]);
        assert_eq!((l.p50, l.p95, l.max), (3, 5, 5));
    }
}
