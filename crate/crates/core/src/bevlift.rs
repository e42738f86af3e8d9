//! Lifting and rasterization geometry of the BEV encoders.
//!
//! Camera features are lifted onto equally spaced points along each
//! feature pixel's ray, weighted by a softmax over depth bins, and splatted
//! into the grid by channel-wise summation along the gravity-aligned z axis.
//! LiDAR points are grouped into vertical pillars on a half-resolution grid.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Point3, PointCloud, Pose3};
use crate::gridmap::{GridMap, GridSpec, Layer};

/// Elevation scale applied before clipping to [-1, 1] (covers +-20 m).
pub const ELEVATION_SCALE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrustumConfig {
    /// Closest depth in meters.
    pub d_min: f64,
    /// Depth bins stop before this distance.
    pub d_max: f64,
    pub spacing: f64,
    pub feature_height: usize,
    pub feature_width: usize,
    pub downsample_factor: usize,
}

impl Default for FrustumConfig {
    fn default() -> Self {
        Self {
            d_min: 4.0,
            d_max: 50.0,
            spacing: 0.2,
            feature_height: 24,
            feature_width: 32,
            downsample_factor: 16,
        }
    }
}

impl FrustumConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_min < self.d_max) || !(self.d_min >= 0.0) {
            return Err(Error::invalid("frustum needs 0 <= d_min < d_max"));
        }
        if !(self.spacing > 0.0) {
            return Err(Error::invalid("frustum spacing must be positive"));
        }
        if self.feature_height == 0 || self.feature_width == 0 || self.downsample_factor == 0 {
            return Err(Error::invalid("feature map dimensions must be positive"));
        }
        if self.depth_bins() == 0 {
            return Err(Error::invalid("frustum has no depth bins"));
        }
        Ok(())
    }

    /// Number of depth bins `N_D`.
    pub fn depth_bins(&self) -> usize {
        ((self.d_max - self.d_min) / self.spacing).round() as usize
    }

    /// Distance of bin `i` from the camera center.
    pub fn depth(&self, i: usize) -> f64 {
        self.d_min + i as f64 * self.spacing
    }

    pub fn depths(&self) -> Vec<f64> {
        (0..self.depth_bins()).map(|i| self.depth(i)).collect()
    }

    pub fn feature_pixels(&self) -> usize {
        self.feature_height * self.feature_width
    }

    pub fn points_per_camera(&self) -> usize {
        self.feature_pixels() * self.depth_bins()
    }

    /// Full-resolution center of a feature pixel's patch, `(u, v)`.
    pub fn patch_center(&self, row: usize, col: usize) -> (f64, f64) {
        let ds = self.downsample_factor as f64;
        ((col as f64 + 0.5) * ds, (row as f64 + 0.5) * ds)
    }
}

/// Pose of a camera's optical frame (z forward, x right, y down) in `BG`,
/// looking along `yaw` and tilted down by `tilt_down`.
pub fn optical_pose(position: Vector3<f64>, yaw: f64, tilt_down: f64) -> Pose3 {
    let optical_to_body = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    let r_opt = UnitQuaternion::from_matrix(&optical_to_body);
    let heading = UnitQuaternion::from_euler_angles(0.0, tilt_down, yaw);
    Pose3::new(heading * r_opt, position)
}

/// Four outward cameras whose images tile exactly into the configured
/// feature map, mounted 1.5 m up and tilted 10 degrees down.
pub fn default_camera_rig(config: &FrustumConfig) -> Vec<(CameraIntrinsics, Pose3)> {
    let width = (config.feature_width * config.downsample_factor) as u32;
    let height = (config.feature_height * config.downsample_factor) as u32;
    let f = width as f64 / 2.0;
    let intrinsics = CameraIntrinsics {
        fx: f,
        fy: f,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        width,
        height,
    };
    (0..4)
        .map(|k| {
            let yaw = k as f64 * std::f64::consts::FRAC_PI_2;
            let position = Vector3::new(0.5 * yaw.cos(), 0.5 * yaw.sin(), 1.5);
            (intrinsics, optical_pose(position, yaw, 10f64.to_radians()))
        })
        .collect()
}

/// Where a lifted point came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrustumSource {
    pub camera: u32,
    pub row: u32,
    pub col: u32,
    pub bin: u32,
}

/// Weighted 3-D feature points in frame `BG`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrustumPointSet {
    pub positions: Vec<Point3>,
    pub weights: Vec<f64>,
    /// Feature channel count `K`.
    pub channels: usize,
    /// Row-major `len() x channels` feature values.
    pub features: Vec<f64>,
    pub sources: Vec<FrustumSource>,
}

impl FrustumPointSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.weights.len() != n || self.features.len() != n * self.channels {
            return Err(Error::invalid(format!(
                "{n} points need {n} weights and {} feature values, got {} and {}",
                n * self.channels,
                self.weights.len(),
                self.features.len()
            )));
        }
        Ok(())
    }

    /// Concatenate another set with the same channel count.
    pub fn extend(&mut self, other: FrustumPointSet) -> Result<()> {
        if !self.is_empty() && self.channels != other.channels {
            return Err(Error::invalid(format!(
                "cannot merge {}-channel points into a {}-channel set",
                other.channels, self.channels
            )));
        }
        self.channels = other.channels;
        self.positions.extend(other.positions);
        self.weights.extend(other.weights);
        self.features.extend(other.features);
        self.sources.extend(other.sources);
        Ok(())
    }
}

/// Points along every feature pixel's ray, at distances
/// `d_min + i * spacing` from the camera center, expressed in `BG`.
///
/// The returned set carries unit weights and no feature channels; see [`lift`].
pub fn generate_frustum(
    intrinsics: &CameraIntrinsics,
    cam_pose: &Pose3,
    config: &FrustumConfig,
    camera: u32,
) -> Result<FrustumPointSet> {
    intrinsics.validate()?;
    config.validate()?;
    let bins = config.depth_bins();
    let n = config.points_per_camera();
    let mut set = FrustumPointSet {
        positions: Vec::with_capacity(n),
        weights: vec![1.0; n],
        channels: 0,
        features: Vec::new(),
        sources: Vec::with_capacity(n),
    };
    for row in 0..config.feature_height {
        for col in 0..config.feature_width {
            let (u, v) = config.patch_center(row, col);
            let dir = intrinsics.ray(u, v).normalize();
            for bin in 0..bins {
                let p = dir * config.depth(bin);
                set.positions.push(cam_pose.transform_point(&p));
                set.sources.push(FrustumSource {
                    camera,
                    row: row as u32,
                    col: col as u32,
                    bin: bin as u32,
                });
            }
        }
    }
    Ok(set)
}

/// Softmax over depth-bin logits.
pub fn depth_weights(logits: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite depth logit {bad}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|e| e / sum).collect())
}

/// Attach depth weights and per-pixel features to a frustum.
///
/// `logits` holds `N_D` values per feature pixel and `features` holds
/// `channels` values per feature pixel, both in row-major pixel order.
pub fn lift(
    frustum: &FrustumPointSet,
    config: &FrustumConfig,
    logits: &[f64],
    features: &[f64],
    channels: usize,
) -> Result<FrustumPointSet> {
    let bins = config.depth_bins();
    let pixels = config.feature_pixels();
    if frustum.len() != pixels * bins {
        return Err(Error::invalid("frustum does not match the configuration"));
    }
    if logits.len() != pixels * bins {
        return Err(Error::invalid(format!(
            "expected {} depth logits, got {}",
            pixels * bins,
            logits.len()
        )));
    }
    if features.len() != pixels * channels {
        return Err(Error::invalid(format!(
            "expected {} feature values, got {}",
            pixels * channels,
            features.len()
        )));
    }
    let mut weights = Vec::with_capacity(frustum.len());
    let mut point_features = Vec::with_capacity(frustum.len() * channels);
    for pixel in 0..pixels {
        weights.extend(depth_weights(&logits[pixel * bins..(pixel + 1) * bins])?);
        let f = &features[pixel * channels..(pixel + 1) * channels];
        for _ in 0..bins {
            point_features.extend_from_slice(f);
        }
    }
    Ok(FrustumPointSet {
        positions: frustum.positions.clone(),
        weights,
        channels,
        features: point_features,
        sources: frustum.sources.clone(),
    })
}

/// Layer name of feature channel `k` in a splatted map.
pub fn feature_layer_name(k: usize) -> String {
    format!("feature_{k:03}")
}

/// Compensated (Neumaier) running sums, one per slot.
#[derive(Clone, Debug)]
struct CompensatedSums {
    sum: Vec<f64>,
    carry: Vec<f64>,
}

impl CompensatedSums {
    fn new(n: usize) -> Self {
        Self {
            sum: vec![0.0; n],
            carry: vec![0.0; n],
        }
    }

    #[inline]
    fn add(&mut self, i: usize, x: f64) {
        let s = self.sum[i];
        let t = s + x;
        if s.abs() >= x.abs() {
            self.carry[i] += (s - t) + x;
        } else {
            self.carry[i] += (x - t) + s;
        }
        self.sum[i] = t;
    }

    fn merge(mut self, other: &CompensatedSums) -> Self {
        for i in 0..self.sum.len() {
            self.add(i, other.sum[i]);
            self.carry[i] += other.carry[i];
        }
        self
    }

    fn total(&self, i: usize) -> f64 {
        self.sum[i] + self.carry[i]
    }
}

fn scatter(
    points: &FrustumPointSet,
    range: std::ops::Range<usize>,
    spec: &GridSpec,
) -> CompensatedSums {
    let k = points.channels;
    let mut acc = CompensatedSums::new(spec.cell_count() * k);
    for i in range {
        let p = &points.positions[i];
        let Some((row, col)) = spec.world_to_cell(p.x, p.y) else {
            continue;
        };
        let cell = spec.index(row, col);
        let w = points.weights[i];
        for (c, f) in points.feature(i).iter().enumerate() {
            acc.add(cell * k + c, w * f);
        }
    }
    acc
}

fn sums_to_map(acc: &CompensatedSums, spec: &GridSpec, channels: usize) -> GridMap {
    let mut map = GridMap::new(*spec, 0.0);
    let n = spec.cell_count();
    for c in 0..channels {
        let values = (0..n).map(|cell| acc.total(cell * channels + c)).collect();
        let layer = Layer::from_parts(spec.height_cells, spec.width_cells, values, vec![true; n])
            .expect("sizes follow the spec");
        map.insert_layer(&feature_layer_name(c), layer)
            .expect("sizes follow the spec");
    }
    map
}

/// Scatter-sum weighted features into grid cells by their `(x, y)`.
///
/// Each channel becomes a fully valid layer; cells without points are 0.
/// Points outside the map are dropped.
pub fn splat(points: &FrustumPointSet, spec: &GridSpec) -> Result<GridMap> {
    points.validate()?;
    let acc = scatter(points, 0..points.len(), spec);
    Ok(sums_to_map(&acc, spec, points.channels))
}

/// [`splat`] sharded across worker threads; partial grids are merged by
/// addition in shard order.
pub fn splat_parallel(points: &FrustumPointSet, spec: &GridSpec, shards: usize) -> Result<GridMap> {
    points.validate()?;
    let shards = shards.max(1);
    let chunk = points.len().div_ceil(shards).max(1);
    let partials: Vec<CompensatedSums> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let start = (s * chunk).min(points.len());
            let end = ((s + 1) * chunk).min(points.len());
            scatter(points, start..end, spec)
        })
        .collect();
    let mut iter = partials.into_iter();
    let first = iter
        .next()
        .unwrap_or_else(|| CompensatedSums::new(spec.cell_count() * points.channels));
    let acc = iter.fold(first, |a, b| a.merge(&b));
    Ok(sums_to_map(&acc, spec, points.channels))
}

/// Vertical-column grouping of a point cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct PillarGrid {
    pub spec: GridSpec,
    pub counts: Vec<u32>,
    sums: Vec<Point3>,
    max_height: Vec<f64>,
}

/// Layer names produced by [`PillarGrid::to_grid_map`].
pub const PILLAR_COUNT: &str = "pillar_count";
pub const PILLAR_MEAN_HEIGHT: &str = "pillar_mean_height";
pub const PILLAR_MAX_HEIGHT: &str = "pillar_max_height";

impl PillarGrid {
    pub fn count(&self, row: usize, col: usize) -> u32 {
        self.counts[self.spec.index(row, col)]
    }

    /// Mean point of a pillar, `None` when empty.
    pub fn centroid(&self, row: usize, col: usize) -> Option<Point3> {
        let i = self.spec.index(row, col);
        (self.counts[i] > 0).then(|| self.sums[i] / self.counts[i] as f64)
    }

    pub fn max_height(&self, row: usize, col: usize) -> Option<f64> {
        let i = self.spec.index(row, col);
        (self.counts[i] > 0).then_some(self.max_height[i])
    }

    pub fn total_points(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Count, mean height and max height as grid layers.
    pub fn to_grid_map(&self, timestamp: f64) -> GridMap {
        let (h, w) = (self.spec.height_cells, self.spec.width_cells);
        let mut count = Layer::filled(h, w, 0.0);
        let mut mean = Layer::new(h, w);
        let mut max = Layer::new(h, w);
        for i in 0..self.counts.len() {
            let n = self.counts[i];
            if n > 0 {
                count.set_index(i, n as f64);
                mean.set_index(i, self.sums[i].z / n as f64);
                max.set_index(i, self.max_height[i]);
            }
        }
        let mut map = GridMap::new(self.spec, timestamp);
        for (name, layer) in [
            (PILLAR_COUNT, count),
            (PILLAR_MEAN_HEIGHT, mean),
            (PILLAR_MAX_HEIGHT, max),
        ] {
            map.insert_layer(name, layer)
                .expect("sizes follow the spec");
        }
        map
    }
}

/// Assign every in-bounds point (by its `x, y`) to one pillar.
pub fn pillar_rasterize(cloud: &PointCloud, spec: &GridSpec) -> PillarGrid {
    let n = spec.cell_count();
    let mut grid = PillarGrid {
        spec: *spec,
        counts: vec![0; n],
        sums: vec![Point3::zeros(); n],
        max_height: vec![f64::NEG_INFINITY; n],
    };
    for p in &cloud.points {
        if let Some((row, col)) = spec.world_to_cell(p.x, p.y) {
            let i = spec.index(row, col);
            grid.counts[i] += 1;
            grid.sums[i] += p;
            grid.max_height[i] = grid.max_height[i].max(p.z);
        }
    }
    grid
}

/// Divisor equivalent to multiplying by `scale`; exact when `1 / scale` is an integer.
fn scale_divisor(scale: f64) -> f64 {
    let inv = 1.0 / scale;
    let rounded = inv.round();
    if (inv - rounded).abs() <= 1e-9 * rounded.abs() {
        rounded
    } else {
        inv
    }
}

/// `clip(scale * e, -1, 1)` on every valid cell.
pub fn normalize_elevation(elevation: &Layer, scale: f64) -> Layer {
    let divisor = scale_divisor(scale);
    elevation.map_valid(|e| (e / divisor).clamp(-1.0, 1.0))
}

/// Inverse of [`normalize_elevation`], exact only inside the clip region.
pub fn denormalize_elevation(normalized: &Layer, scale: f64) -> Layer {
    let divisor = scale_divisor(scale);
    normalized.map_valid(|n| n * divisor)
}
