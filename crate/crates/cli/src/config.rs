//! Run configuration shared by every subcommand.

use std::path::Path;

use anyhow::{bail, Context};
use hbev_core::bevlift::FrustumConfig;
use hbev_core::hindsight::FusionPolicy;
use hbev_core::metrics::EvalConfig;
use hbev_core::postproc::DEFAULT_BINS;
use hbev_core::synthworld::{SensorSpec, WorldGenConfig};
use hbev_core::GridSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub fusion: FusionPolicy,
    pub frustum: FrustumConfig,
    pub eval: EvalConfig,
    pub world: WorldGenConfig,
    pub sensor: SensorSpec,
    pub labels: LabelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default_vehicle_map(),
            fusion: FusionPolicy::default(),
            frustum: FrustumConfig::default(),
            eval: EvalConfig::default(),
            world: WorldGenConfig::default(),
            sensor: SensorSpec::default(),
            labels: LabelConfig::default(),
        }
    }
}

/// Hindsight label generation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelConfig {
    /// Minimum planar travel between two reference samples, meters.
    pub min_travel: f64,
    /// Histogram bins of the loss-weight tables.
    pub n_bins: usize,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            min_travel: 0.2,
            n_bins: DEFAULT_BINS,
        }
    }
}

impl RunConfig {
    /// Read TOML or JSON (by extension; anything but `.json` is TOML).
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.grid.validate()?;
        self.fusion.validate()?;
        self.frustum.validate()?;
        self.eval.validate()?;
        self.world.validate()?;
        self.sensor.validate()?;
        if !(self.labels.min_travel >= 0.0) {
            bail!("labels.min_travel must be non-negative");
        }
        if self.labels.n_bins == 0 {
            bail!("labels.n_bins must be positive");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
