//! One JSON document holding every tunable of a run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::dsp::PeakConfig;
use crate::error::{Error, Result};
use crate::events::EventLimits;
use crate::stream::{Pace, SWEEP_RATES_HZ};
use crate::synth::BenchmarkConfig;
use crate::vae::{TrainConfig, VaeArchitecture};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub pace: Pace,
    pub sweep_rates_hz: Vec<f64>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            pace: Pace::Unpaced,
            sweep_rates_hz: SWEEP_RATES_HZ.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentSweepConfig {
    pub latent_dims: Vec<usize>,
    pub metrics: Vec<crate::detector::ScoreMetric>,
}

impl Default for LatentSweepConfig {
    fn default() -> Self {
        use crate::detector::ScoreMetric;
        Self {
            latent_dims: vec![5, 10, 20, 40, 80],
            metrics: vec![ScoreMetric::Mse, ScoreMetric::Mae],
        }
    }
}

/// Unknown keys anywhere in the document are rejected; missing keys take
/// their built-in defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: BenchmarkConfig,
    pub architecture: VaeArchitecture,
    pub train: TrainConfig,
    pub detector: DetectorConfig,
    pub peaks: PeakConfig,
    pub events: EventLimits,
    pub stream: StreamConfig,
    pub latent_sweep: LatentSweepConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::parse("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        self.train.validate()?;
        self.detector.validate()?;
        if self.architecture.input_len != crate::signal::seconds_to_samples(self.detector.window_s, self.detector.fs_target_hz) {
            return Err(Error::invalid(format!(
                "architecture input_len {} does not match a {} s window at {} Hz",
                self.architecture.input_len, self.detector.window_s, self.detector.fs_target_hz
            )));
        }
        if !(0.0..=1.0).contains(&self.benchmark.artifact_fraction) {
            return Err(Error::invalid(format!(
                "artifact_fraction must lie in [0, 1], got {}",
                self.benchmark.artifact_fraction
            )));
        }
        if let Some(r) = self.stream.sweep_rates_hz.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::invalid(format!("sweep rate must be positive, got {r}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn defaults_round_trip() {
        let text = serde_json::to_string_pretty(&RunConfig::default()).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"tarin": {}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"learning_rate": 0.1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"detector": {"heuristics": {"bogus": 1}}}"#).is_err());
    }

    #[test]
    fn partial_override_keeps_other_defaults() {
        let cfg = RunConfig::from_json(r#"{"train": {"max_epochs": 3, "patience": 2}, "events": {"sbp_limit": 160}}"#).unwrap();
        assert_eq!(cfg.train.max_epochs, 3);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.events.sbp_limit, 160.0);
        assert_eq!(cfg.events.dbp_limit, 90.0);
    }

    #[test]
    fn inconsistent_window_is_rejected() {
        assert!(RunConfig::from_json(r#"{"detector": {"fs_target_hz": 100}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"benchmark": {"artifact_fraction": 1.5}}"#).is_err());
    }
}
