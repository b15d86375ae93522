//! TOML experiment configuration. Every field has a default matching the
//! reference experiment setup, so an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::contract::{ValidationPolicy, ViolationMode};
use crate::data::{PartitionPlan, SyntheticSpec};
use crate::error::{Error, Result};
use crate::federation::RoundConfig;
use crate::ledger::LedgerConfig;
use crate::nn::Hyperparameters;

pub const DEFAULT_ATTACK_CAP: usize = 20_000;

/// Where the NetFlow CSV lives; when `csv_path` is absent the run falls back
/// to the synthetic generator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub csv_path: Option<PathBuf>,
    /// Optional schema override; the bundled NetFlow column layout otherwise.
    pub schema_path: Option<PathBuf>,
}

/// Parameters of the synthetic five-cluster dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub feature_dim: usize,
    pub separation: f64,
    pub std_dev: f64,
    pub benign_count: usize,
    pub attack_count: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            feature_dim: 6,
            separation: 4.0,
            std_dev: 1.0,
            benign_count: 32_000,
            attack_count: 2_000,
        }
    }
}

impl SyntheticConfig {
    pub fn to_spec(&self) -> SyntheticSpec {
        let mut spec = SyntheticSpec::five_class(
            self.feature_dim,
            self.separation,
            self.benign_count,
            self.attack_count,
        );
        spec.std_dev = self.std_dev;
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub repeats: usize,
    pub split_ratio: f64,
    pub threshold: f64,
    pub dataset: DatasetConfig,
    pub synthetic: SyntheticConfig,
    pub partition: PartitionPlan,
    pub hyperparameters: Hyperparameters,
    pub rounds: RoundConfig,
    pub validation: ValidationPolicy,
    pub violation_mode: ViolationMode,
    pub ledger: LedgerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            repeats: 3,
            split_ratio: 0.7,
            threshold: 0.5,
            dataset: DatasetConfig::default(),
            synthetic: SyntheticConfig::default(),
            partition: PartitionPlan::two_org_default(Some(DEFAULT_ATTACK_CAP)),
            hyperparameters: Hyperparameters::default(),
            rounds: RoundConfig::default(),
            validation: ValidationPolicy::default(),
            violation_mode: ViolationMode::default(),
            ledger: LedgerConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: Self = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serialising config: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        if !(0.0 < self.split_ratio && self.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "split ratio {} must be in (0,1)",
                self.split_ratio
            )));
        }
        if !(0.0 < self.threshold && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "decision threshold {} must be in (0,1)",
                self.threshold
            )));
        }
        if self.synthetic.feature_dim == 0 {
            return Err(Error::Config("synthetic feature dim must be >= 1".into()));
        }
        if self.synthetic.std_dev <= 0.0 || self.synthetic.separation <= 0.0 {
            return Err(Error::Config(
                "synthetic separation and std dev must be > 0".into(),
            ));
        }
        if self.partition.endpoints.is_empty() {
            return Err(Error::Config("partition plan has no endpoints".into()));
        }
        self.hyperparameters.validate()?;
        self.rounds.validate()?;
        Ok(())
    }
}
