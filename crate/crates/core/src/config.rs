//! Single-file pipeline configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{ExportConfig, PredSpace};
use crate::ingest::SampleSelectionConfig;
use crate::patching::PatchConfig;
use crate::repair::{FillConfig, OutlierConfig};
use crate::split::DEFAULT_TRAIN_FRACTION;
use crate::stats::StatsConfig;
use crate::synth::SynthConfig;
use crate::verticalize::TrimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: DEFAULT_TRAIN_FRACTION,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub pred_space: PredSpace,
    /// Skip pixels in the invalid/outlier masks.
    pub exclude_masked: bool,
    /// Aggregate over all pixels instead of averaging per-patch metrics.
    pub pixel_pooled: bool,
    pub exports: ExportConfig,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pred_space: PredSpace::Metric,
            exclude_masked: false,
            pixel_pooled: false,
            exports: ExportConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub selection: SampleSelectionConfig,
    pub trim: TrimConfig,
    pub fill: FillConfig,
    pub outlier: OutlierConfig,
    pub patch: PatchConfig,
    pub split: SplitConfig,
    pub stats: StatsConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.selection.validate()?;
        self.trim.validate()?;
        self.fill.validate()?;
        self.outlier.validate()?;
        self.patch.validate()?;
        self.stats.validate()?;
        self.eval.exports.validate()?;
        self.synth.validate()?;
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::Config(
                "split.train_fraction must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn from_yaml(text: &str) -> Result<Self> {
        let cfg: Self = serde_yaml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_yaml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("config serialises")
    }

    /// Points every seeded component at `seed`.
    pub fn set_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        self.stats.rng_seed = seed;
        self.eval.seed = seed;
        self.synth.seed = seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_yaml() {
        let d = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_yaml(&d.to_yaml()).unwrap(), d);
        assert_eq!(PipelineConfig::from_yaml("{}").unwrap(), d);
    }

    #[test]
    fn tuned_defaults() {
        let d = PipelineConfig::default();
        assert_eq!(d.fill.kernel, 31);
        assert_eq!(d.patch.patch_size, 518);
        assert_eq!(d.split.train_fraction, 0.805);
        assert_eq!(d.outlier.passes.len(), 3);
        assert_eq!(d.trim.tau_first, 1.0);
        assert_eq!(d.trim.tau_second, 0.1);
        assert_eq!(d.selection.nodata_sentinel, -32767.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            PipelineConfig::from_yaml("bogus: 1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::from_yaml("fill:\n  kernal: 31"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn partial_override_keeps_other_defaults() {
        let c =
            PipelineConfig::from_yaml("fill:\n  kernel: 11\npatch:\n  patch_size: 64\n").unwrap();
        assert_eq!(c.fill.kernel, 11);
        assert_eq!(c.patch.patch_size, 64);
        assert_eq!(c.patch.max_black_fraction, 0.10);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(matches!(
            PipelineConfig::from_yaml("fill:\n  kernel: 4"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::from_yaml("split:\n  train_fraction: 1.5"),
            Err(Error::Config(_))
        ));
    }
}
