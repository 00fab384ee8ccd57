//! Coarse domain-knowledge filters for non-physiological segments.

use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::signal::{Modality, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicReason {
    RangeViolation,
    LowPeakToPeak,
    BandPowerViolation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeuristicVerdict {
    pub passed: bool,
    pub reasons: Vec<HeuristicReason>,
}

impl HeuristicVerdict {
    fn from_reasons(reasons: Vec<HeuristicReason>) -> Self {
        Self {
            passed: reasons.is_empty(),
            reasons,
        }
    }

    pub fn pass() -> Self {
        Self::from_reasons(Vec::new())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicConfig {
    /// Lowest admissible ABP value in mmHg (inclusive).
    pub abp_min: f64,
    /// Highest admissible ABP value in mmHg (inclusive).
    pub abp_max: f64,
    /// Peak-to-peak must exceed this, in mmHg.
    pub min_pp: f64,
    pub ppg_band: [f64; 2],
    pub ppg_max_out_fraction: f64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            abp_min: 0.0,
            abp_max: 300.0,
            min_pp: 15.0,
            ppg_band: [0.5, 3.0],
            ppg_max_out_fraction: 0.30,
        }
    }
}

pub fn abp_range_check(values: &[f64], cfg: &HeuristicConfig) -> bool {
    values.iter().all(|&v| v >= cfg.abp_min && v <= cfg.abp_max)
}

pub fn peak_to_peak_check(values: &[f64], cfg: &HeuristicConfig) -> bool {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo > cfg.min_pp
}

/// Fails when more than `ppg_max_out_fraction` of non-DC power lies outside
/// the band. A segment with no AC power at all fails too.
pub fn ppg_band_power_check(values: &[f64], fs_hz: f64, cfg: &HeuristicConfig) -> bool {
    let [lo, hi] = cfg.ppg_band;
    match dsp::band_power_fraction(values, fs_hz, lo, hi) {
        Ok(inside) => 1.0 - inside <= cfg.ppg_max_out_fraction,
        Err(_) => false,
    }
}

pub fn apply_heuristics(segment: &Segment, cfg: &HeuristicConfig) -> HeuristicVerdict {
    let mut reasons = Vec::new();
    match segment.modality {
        Modality::Abp => {
            if !abp_range_check(&segment.values, cfg) {
                reasons.push(HeuristicReason::RangeViolation);
            }
            if !peak_to_peak_check(&segment.values, cfg) {
                reasons.push(HeuristicReason::LowPeakToPeak);
            }
        }
        Modality::Ppg => {
            if !ppg_band_power_check(&segment.values, segment.fs_hz, cfg) {
                reasons.push(HeuristicReason::BandPowerViolation);
            }
        }
    }
    HeuristicVerdict::from_reasons(reasons)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn tone(f: f64, fs: f64) -> Vec<f64> {
        (0..1200).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect()
    }

    fn abp(values: Vec<f64>) -> Segment {
        Segment::from_values(values, 120.0, Modality::Abp)
    }

    #[test]
    fn range_boundaries() {
        let cfg = HeuristicConfig::default();
        assert!(!abp_range_check(&[90.0, -5.0, 100.0], &cfg));
        assert!(abp_range_check(&[300.0; 10], &cfg));
        assert!(abp_range_check(&[0.0; 10], &cfg));
        let sinus: Vec<f64> = tone(1.0, 120.0).iter().map(|v| 90.0 + 20.0 * v).collect();
        assert!(abp_range_check(&sinus, &cfg));
    }

    #[test]
    fn peak_to_peak_threshold_is_strict() {
        let cfg = HeuristicConfig::default();
        assert!(!peak_to_peak_check(&[80.0, 92.0], &cfg));
        assert!(!peak_to_peak_check(&[80.0, 95.0], &cfg));
        assert!(peak_to_peak_check(&[80.0, 120.0], &cfg));
        assert!(!peak_to_peak_check(&[80.0; 5], &cfg));
    }

    #[test]
    fn ppg_band_power() {
        let cfg = HeuristicConfig::default();
        assert!(ppg_band_power_check(&tone(1.2, 120.0), 120.0, &cfg));
        assert!(!ppg_band_power_check(&tone(5.0, 120.0), 120.0, &cfg));
        let two: Vec<f64> = tone(1.0, 120.0).iter().zip(tone(4.0, 120.0)).map(|(a, b)| a + b).collect();
        assert!(!ppg_band_power_check(&two, 120.0, &cfg));
    }

    #[test]
    fn reasons_are_unioned() {
        let cfg = HeuristicConfig::default();
        let v = apply_heuristics(&abp(vec![-5.0, -1.0, 2.0, 3.0]), &cfg);
        assert!(!v.passed);
        assert_eq!(v.reasons, vec![HeuristicReason::RangeViolation, HeuristicReason::LowPeakToPeak]);

        let ppg = Segment::from_values(tone(1.0, 120.0), 120.0, Modality::Ppg);
        assert!(apply_heuristics(&ppg, &cfg).passed);
    }

    proptest! {
        #[test]
        fn out_of_range_sample_flips_range_check(
            base in prop::collection::vec(20.0f64..200.0, 2..100),
            bad in prop_oneof![-1000.0f64..-1e-9, 300.0001f64..1000.0],
            at in 0usize..100,
        ) {
            let cfg = HeuristicConfig::default();
            prop_assert!(abp_range_check(&base, &cfg));
            let mut v = base.clone();
            let at = at % v.len();
            v.insert(at, bad);
            prop_assert!(!abp_range_check(&v, &cfg));
        }

        #[test]
        fn ppg_decision_scale_invariant(
            f1 in 0.2f64..8.0,
            f2 in 0.2f64..8.0,
            a2 in 0.0f64..2.0,
            k in 1e-3f64..1e3,
        ) {
            let cfg = HeuristicConfig::default();
            let x: Vec<f64> = tone(f1, 120.0).iter().zip(tone(f2, 120.0)).map(|(a, b)| a + a2 * b).collect();
            let scaled: Vec<f64> = x.iter().map(|v| v * k).collect();
            let in_x = dsp::band_power_fraction(&x, 120.0, 0.5, 3.0).unwrap();
            // Skip cases sitting on the decision boundary to rounding precision.
            prop_assume!(((1.0 - in_x) - cfg.ppg_max_out_fraction).abs() > 1e-9);
            prop_assert_eq!(
                ppg_band_power_check(&x, 120.0, &cfg),
                ppg_band_power_check(&scaled, 120.0, &cfg)
            );
        }

        #[test]
        fn verdict_fails_iff_some_check_fails(v in prop::collection::vec(-20.0f64..320.0, 2..50)) {
            let cfg = HeuristicConfig::default();
            let verdict = apply_heuristics(&abp(v.clone()), &cfg);
            let any_fail = !abp_range_check(&v, &cfg) || !peak_to_peak_check(&v, &cfg);
            prop_assert_eq!(verdict.passed, !any_fail);
            prop_assert_eq!(verdict.passed, verdict.reasons.is_empty());
        }
    }
}
