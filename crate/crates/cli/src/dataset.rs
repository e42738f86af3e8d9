//! Dataset and label-set manifests.

use std::path::Path;

use anyhow::{bail, Context};
use hbev_core::hindsight::FusionPolicy;
use hbev_core::synthworld::WorldDescription;
use hbev_core::{Pose2, Pose3};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub translation: [f64; 3],
    pub rotation_wxyz: [f64; 4],
}

impl From<&Pose3> for PoseRecord {
    fn from(p: &Pose3) -> Self {
        Self {
            translation: p.translation.into(),
            rotation_wxyz: p.wxyz(),
        }
    }
}

impl PoseRecord {
    pub fn to_pose(&self) -> anyhow::Result<Pose3> {
        Ok(Pose3::from_wxyz(
            self.rotation_wxyz,
            Vector3::from(self.translation),
        )?)
    }
}

/// One trajectory sample of a generated dataset. Paths are relative to the
/// dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepEntry {
    pub index: usize,
    pub time: f64,
    /// Gravity-aligned base frame in the odometry frame.
    pub bg_pose: PoseRecord,
    pub points: usize,
    pub cloud: String,
    pub estimate: String,
    pub oracle: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub config_hash: String,
    pub config: RunConfig,
    pub world: WorldDescription,
    pub trajectory: String,
    pub steps: Vec<StepEntry>,
}

/// One hindsight label map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelEntry {
    pub index: usize,
    pub time: f64,
    /// Number of estimate maps fused into this label.
    pub fused: usize,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelManifest {
    pub version: u32,
    pub config_hash: String,
    pub dataset_config_hash: String,
    pub policy: FusionPolicy,
    pub min_travel: f64,
    pub labels: Vec<LabelEntry>,
    /// Loss-weight tables, absent when no label was produced.
    pub weights: Option<String>,
}

pub fn read_manifest<T: for<'de> Deserialize<'de>>(dir: &Path) -> anyhow::Result<T> {
    let path = dir.join(MANIFEST);
    hbev_core::io::read_json(&path)
        .with_context(|| format!("loading manifest of {}", dir.display()))
}

impl DatasetManifest {
    pub fn validate(&self) -> anyhow::Result<()> {
        for pair in self.steps.windows(2) {
            if !(pair[0].time < pair[1].time) {
                bail!(
                    "dataset steps {} and {} are not in increasing time order",
                    pair[0].index,
                    pair[1].index
                );
            }
        }
        Ok(())
    }
}

/// Keep the first sample and every later one reached after at least
/// `min_travel` meters of planar path length since the last kept sample.
pub fn select_by_travel(poses: &[Pose2], min_travel: f64) -> Vec<usize> {
    // absorbs rounding in the accumulated path length
    const TOLERANCE: f64 = 1e-9;
    let mut selected = Vec::new();
    let mut travelled = 0.0;
    for (i, pose) in poses.iter().enumerate() {
        if i > 0 {
            travelled += pose.distance(&poses[i - 1]);
        }
        if selected.is_empty() || travelled + TOLERANCE >= min_travel {
            selected.push(i);
            travelled = 0.0;
        }
    }
    selected
}

/// File name used for sample `index` with the given extension.
pub fn sample_file(index: usize, extension: &str) -> String {
    format!("{index:06}.{extension}")
}
