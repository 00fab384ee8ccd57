//! Hypertensive pulse counting on raw and cleaned pressure signals.

use serde::{Deserialize, Serialize};

use crate::dsp::{detect_peaks, finite_runs, PeakConfig};
use crate::error::{Error, Result};
use crate::signal::Signal;

/// Strict limits: a pulse is hypertensive above either one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventLimits {
    pub sbp_limit: f64,
    pub dbp_limit: f64,
}

impl Default for EventLimits {
    fn default() -> Self {
        Self {
            sbp_limit: 140.0,
            dbp_limit: 90.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Beats {
    /// Systolic peaks.
    pub peaks: Vec<usize>,
    /// Diastolic troughs.
    pub troughs: Vec<usize>,
}

/// Peaks of the signal and of its negation; NaN runs split the search.
pub fn detect_beats(values: &[f64], fs_hz: f64, cfg: &PeakConfig) -> Beats {
    let negated: Vec<f64> = values.iter().map(|v| -v).collect();
    Beats {
        peaks: detect_peaks(values, fs_hz, cfg),
        troughs: detect_peaks(&negated, fs_hz, cfg),
    }
}

/// One counted pulse: a trough with the first peak after it, or a lone
/// extremum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pulse {
    pub trough: Option<usize>,
    pub peak: Option<usize>,
}

/// Pairs each trough with the first peak that follows it before the next
/// trough and within the same finite run. Extrema left over stand alone.
pub fn pair_pulses(values: &[f64], beats: &Beats) -> Vec<Pulse> {
    let run_of = {
        let runs = finite_runs(values);
        move |i: usize| runs.iter().position(|&(s, e)| i >= s && i < e)
    };
    let mut pulses = Vec::new();
    let mut used = vec![false; beats.peaks.len()];
    let mut p = 0;
    for (k, &t) in beats.troughs.iter().enumerate() {
        let next_trough = beats.troughs.get(k + 1).copied().unwrap_or(usize::MAX);
        while p < beats.peaks.len() && beats.peaks[p] <= t {
            p += 1;
        }
        let peak = (p < beats.peaks.len() && beats.peaks[p] < next_trough && run_of(beats.peaks[p]) == run_of(t))
            .then(|| beats.peaks[p]);
        if peak.is_some() {
            used[p] = true;
            p += 1;
        }
        pulses.push(Pulse { trough: Some(t), peak });
    }
    for (i, &pk) in beats.peaks.iter().enumerate() {
        if !used[i] {
            pulses.push(Pulse { trough: None, peak: Some(pk) });
        }
    }
    pulses.sort_by_key(|p| p.trough.or(p.peak));
    pulses
}

pub fn is_hypertensive(values: &[f64], pulse: &Pulse, limits: &EventLimits) -> bool {
    pulse.peak.is_some_and(|i| values[i] > limits.sbp_limit) || pulse.trough.is_some_and(|i| values[i] > limits.dbp_limit)
}

/// Number of pulses and number of hypertensive pulses.
pub fn pulse_counts(values: &[f64], fs_hz: f64, limits: &EventLimits, cfg: &PeakConfig) -> (usize, usize) {
    let pulses = pair_pulses(values, &detect_beats(values, fs_hz, cfg));
    let hyper = pulses.iter().filter(|p| is_hypertensive(values, p, limits)).count();
    (pulses.len(), hyper)
}

pub fn count_hypertensive_pulses(values: &[f64], fs_hz: f64, limits: &EventLimits, cfg: &PeakConfig) -> usize {
    pulse_counts(values, fs_hz, limits, cfg).1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub pulses_before: usize,
    pub pulses_after: usize,
    /// `1 - after / before`, or 0 when nothing was counted before.
    pub reduced_proportion: f64,
    pub beats_analyzed_before: usize,
    pub beats_analyzed_after: usize,
}

pub fn event_reduction_report(raw: &Signal, cleaned: &Signal, limits: &EventLimits, cfg: &PeakConfig) -> Result<EventReport> {
    if raw.len() != cleaned.len() {
        return Err(Error::shape(format!(
            "raw signal has {} samples, cleaned {}",
            raw.len(),
            cleaned.len()
        )));
    }
    let (beats_before, before) = pulse_counts(&raw.samples, raw.fs_hz, limits, cfg);
    let (beats_after, after) = pulse_counts(&cleaned.samples, cleaned.fs_hz, limits, cfg);
    let reduced_proportion = if before > 0 {
        1.0 - after as f64 / before as f64
    } else {
        0.0
    };
    Ok(EventReport {
        pulses_before: before,
        pulses_after: after,
        reduced_proportion,
        beats_analyzed_before: beats_before,
        beats_analyzed_after: beats_after,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_patient, PatientProfile};
    use proptest::prelude::*;

    fn profile(map: f64, pp: f64, hr: f64, notch: f64, seed: u64) -> PatientProfile {
        PatientProfile {
            map_mmhg: map,
            pulse_pressure_mmhg: pp,
            hr_bpm: hr,
            notch_depth: notch,
            resp_rate_hz: 0.25,
            drift_scale: 0.0,
            seed,
        }
    }

    /// Ten beats at 60 bpm with the requested systolic and diastolic values.
    fn ten_beats(sbp: f64, dbp: f64) -> Vec<f64> {
        let pp = sbp - dbp;
        let map = dbp + pp / 3.0;
        let (s, _) = synth_patient(&profile(map, pp, 60.0, 0.3, 5), 10.0, 120.0).unwrap();
        s.samples
    }

    #[test]
    fn beat_detection_on_ten_beats() {
        let (s, onsets) = synth_patient(&profile(90.0, 45.0, 60.0, 0.5, 1), 10.0, 120.0).unwrap();
        let beats = detect_beats(&s.samples, 120.0, &PeakConfig::default());
        assert!((9..=11).contains(&onsets.len()));
        assert!(beats.peaks.len().abs_diff(10) <= 1, "{:?}", beats.peaks);
        assert!(beats.troughs.len().abs_diff(10) <= 1, "{:?}", beats.troughs);
    }

    #[test]
    fn nan_regions_yield_no_extrema() {
        let cfg = PeakConfig::default();
        assert_eq!(detect_beats(&[f64::NAN; 500], 120.0, &cfg), Beats::default());
        let (s, _) = synth_patient(&profile(90.0, 45.0, 75.0, 0.5, 2), 30.0, 120.0).unwrap();
        let mut v = s.samples;
        v[1200..2400].fill(f64::NAN);
        let b = detect_beats(&v, 120.0, &cfg);
        assert!(b.peaks.iter().chain(&b.troughs).all(|&i| !(1200..2400).contains(&i)));
        assert!(!b.peaks.is_empty());
    }

    #[test]
    fn criteria_examples() {
        let limits = EventLimits::default();
        let cfg = PeakConfig::default();
        let count = |v: &[f64]| count_hypertensive_pulses(v, 120.0, &limits, &cfg);
        let c = count(&ten_beats(150.0, 80.0));
        assert!((9..=11).contains(&c), "{c}");
        let c = count(&ten_beats(120.0, 95.0));
        assert!((9..=11).contains(&c), "{c}");
        assert_eq!(count(&ten_beats(120.0, 70.0)), 0);
    }

    #[test]
    fn beat_meeting_both_limits_counts_once() {
        let limits = EventLimits::default();
        let cfg = PeakConfig::default();
        let v = ten_beats(160.0, 100.0);
        let beats = detect_beats(&v, 120.0, &cfg);
        let count = count_hypertensive_pulses(&v, 120.0, &limits, &cfg);
        assert!(count < beats.peaks.len() + beats.troughs.len());
        assert!(count.abs_diff(10) <= 1);
    }

    #[test]
    fn limits_are_strict() {
        let values = [100.0, 50.0, 140.0, 60.0, 90.0, 40.0];
        let limits = EventLimits::default();
        let at_limit = Pulse {
            trough: Some(4),
            peak: Some(2),
        };
        assert!(!is_hypertensive(&values, &at_limit, &limits));
        assert!(is_hypertensive(&values, &Pulse { trough: None, peak: Some(0) }, &EventLimits { sbp_limit: 99.0, ..limits }));
    }

    #[test]
    fn pairing_rule() {
        let values = vec![0.0; 100];
        let beats = Beats {
            peaks: vec![5, 20, 25, 60],
            troughs: vec![10, 40, 50],
        };
        let pulses = pair_pulses(&values, &beats);
        assert_eq!(
            pulses,
            vec![
                Pulse { trough: None, peak: Some(5) },
                Pulse { trough: Some(10), peak: Some(20) },
                Pulse { trough: None, peak: Some(25) },
                Pulse { trough: Some(40), peak: None },
                Pulse { trough: Some(50), peak: Some(60) },
            ]
        );
    }

    #[test]
    fn report_examples() {
        let limits = EventLimits::default();
        let cfg = PeakConfig::default();
        let raw = Signal::new(ten_beats(150.0, 80.0), 120.0, crate::signal::Modality::Abp, "p").unwrap();
        let r = event_reduction_report(&raw, &raw, &limits, &cfg).unwrap();
        assert_eq!(r.reduced_proportion, 0.0);
        assert_eq!(r.pulses_before, r.pulses_after);

        let calm = Signal::new(ten_beats(120.0, 70.0), 120.0, crate::signal::Modality::Abp, "p").unwrap();
        let r = event_reduction_report(&calm, &calm, &limits, &cfg).unwrap();
        assert_eq!((r.pulses_before, r.reduced_proportion), (0, 0.0));

        let short = Signal::new(vec![1.0; 10], 120.0, crate::signal::Modality::Abp, "p").unwrap();
        assert!(event_reduction_report(&raw, &short, &limits, &cfg).is_err());
    }

    #[test]
    fn beat_count_matches_annotation() {
        let cfg = PeakConfig::default();
        for (k, (hr, pp, notch)) in [(50.0, 30.0, 0.8), (72.0, 45.0, 0.5), (95.0, 60.0, 0.2), (120.0, 40.0, 0.8), (60.0, 60.0, 0.8)]
            .into_iter()
            .enumerate()
        {
            let (s, onsets) = synth_patient(&profile(85.0, pp, hr, notch, k as u64), 60.0, 120.0).unwrap();
            let b = detect_beats(&s.samples, 120.0, &cfg);
            assert!(b.peaks.len().abs_diff(onsets.len()) <= 2, "hr {hr}: {} peaks vs {} beats", b.peaks.len(), onsets.len());
            assert!(b.troughs.len().abs_diff(onsets.len()) <= 2, "hr {hr}: {} troughs vs {} beats", b.troughs.len(), onsets.len());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn masking_never_adds_pulses(start in 0usize..3000, len in 1usize..1500, seed in 0u64..1000) {
            let (s, _) = synth_patient(&profile(105.0, 50.0, 80.0, 0.5, seed), 30.0, 120.0).unwrap();
            let limits = EventLimits::default();
            let cfg = PeakConfig::default();
            let before = count_hypertensive_pulses(&s.samples, 120.0, &limits, &cfg);
            let mut masked = s.samples.clone();
            let end = (start + len).min(masked.len());
            masked[start..end].fill(f64::NAN);
            prop_assert!(count_hypertensive_pulses(&masked, 120.0, &limits, &cfg) <= before);
        }
    }
}
