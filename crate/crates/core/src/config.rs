//! Pipeline configuration, read from a TOML file with one table per stage.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmeans::ClusterConfig;
use crate::labeler::LabelConfig;
use crate::noise::AggregationConfig;
use crate::relatedness::DEFAULT_NOISE_THRESHOLD;
use crate::scheduler::EcgConfig;
use crate::taxonomy::TaxonomyConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
}

/// Settings for the corpus statistics report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    /// Relatedness distance above which a linked entity counts as noise.
    pub sr_threshold: f64,
    pub histogram_bins: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            sr_threshold: DEFAULT_NOISE_THRESHOLD,
            histogram_bins: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub aggregation: AggregationConfig,
    pub taxonomy: TaxonomyConfig,
    pub cluster: ClusterConfig,
    pub label: LabelConfig,
    pub ecg: EcgConfig,
    pub stats: StatsConfig,
    /// Inherit clusters along the spanning forest instead of clustering
    /// every article from scratch.
    pub reuse: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            aggregation: AggregationConfig::default(),
            taxonomy: TaxonomyConfig::default(),
            cluster: ClusterConfig::default(),
            label: LabelConfig::default(),
            ecg: EcgConfig::default(),
            stats: StatsConfig::default(),
            reuse: true,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.aggregation.validate().map_err(|e| invalid(&e))?;
        self.taxonomy.validate().map_err(|e| invalid(&e))?;
        self.cluster.validate().map_err(|e| invalid(&e))?;
        self.label.validate().map_err(|e| invalid(&e))?;
        self.ecg.validate().map_err(|e| invalid(&e))?;
        if self.stats.histogram_bins == 0 {
            return Err(ConfigError::Invalid(
                "stats.histogram_bins must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml_string();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), cfg);
        assert!(text.contains("threshold = 0.77"));
        assert!(text.contains("sr_threshold = 0.53"));
        assert!(text.contains("tau = 0.05"));
        assert!(text.contains("zeta = 0.8"));
        assert!(text.contains("significance = 0.0001"));
    }

    #[test]
    fn partial_and_invalid() {
        let cfg = PipelineConfig::from_toml_str("reuse = false\n[label]\nzeta = 1.0\n").unwrap();
        assert!(!cfg.reuse);
        assert_eq!(cfg.label.zeta, 1.0);
        assert_eq!(cfg.label.max_level, 5);
        assert!(matches!(
            PipelineConfig::from_toml_str("[label]\nzeta = 0.0\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml_str("[label]\nbogus = 1\n"),
            Err(ConfigError::Parse(_))
        ));
    }
}
