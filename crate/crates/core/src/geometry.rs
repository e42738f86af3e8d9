//! Rigid-body frames and point-cloud preparation.
//!
//! Frames follow the usual vehicle conventions: `W` is the odometry (world)
//! frame, `B` the vehicle base, `BG` the base frame with roll and pitch
//! removed so that its z axis is aligned with gravity. Rotations use the
//! Z-Y-X intrinsic Euler convention whenever angles are extracted.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Translation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;

/// Tolerance on |pitch| - pi/2 below which yaw extraction is ill-defined.
pub const GIMBAL_TOLERANCE: f64 = 1e-6;

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(TAU);
    if wrapped > PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

/// SE(3) rigid transform: `p_parent = rotation * p_child + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose3 {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose3 {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Build from Z-Y-X Euler angles: `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64, translation: Vector3<f64>) -> Self {
        Self::new(
            UnitQuaternion::from_euler_angles(roll, pitch, yaw),
            translation,
        )
    }

    /// Build from a `(w, x, y, z)` quaternion, normalizing it.
    pub fn from_wxyz(wxyz: [f64; 4], translation: Vector3<f64>) -> Result<Self> {
        let q = nalgebra::Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::invalid(format!(
                "quaternion {wxyz:?} cannot be normalized"
            )));
        }
        Ok(Self::new(UnitQuaternion::from_quaternion(q), translation))
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose3) -> Pose3 {
        Pose3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose3 {
        let rotation = self.rotation.inverse();
        Pose3 {
            rotation,
            translation: -(rotation * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `(roll, pitch, yaw)` in the Z-Y-X convention.
    pub fn euler_angles(&self) -> (f64, f64, f64) {
        self.rotation.euler_angles()
    }

    pub fn to_isometry(&self) -> nalgebra::Isometry3<f64> {
        nalgebra::Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }

    /// Linear translation and slerp rotation between `a` (s = 0) and `b` (s = 1).
    pub fn interpolate(a: &Pose3, b: &Pose3, s: f64) -> Pose3 {
        let translation = a.translation + (b.translation - a.translation) * s;
        let rotation = a
            .rotation
            .try_slerp(&b.rotation, s, 1e-12)
            .unwrap_or(if s < 0.5 { a.rotation } else { b.rotation });
        Pose3 {
            rotation,
            translation,
        }
    }
}

impl std::ops::Mul for Pose3 {
    type Output = Pose3;

    fn mul(self, rhs: Pose3) -> Pose3 {
        self.compose(&rhs)
    }
}

/// Remove roll and pitch from a base pose, keeping yaw and translation.
///
/// The result is the pose of frame `BG` in the same parent frame.
pub fn gravity_align(base_pose: &Pose3) -> Result<Pose3> {
    let (_, pitch, yaw) = base_pose.euler_angles();
    if (pitch.abs() - FRAC_PI_2).abs() <= GIMBAL_TOLERANCE {
        return Err(Error::Degenerate { pitch });
    }
    Ok(Pose3::new(
        UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
        base_pose.translation,
    ))
}

/// Planar rigid transform (frame `BG` projected onto the ground plane).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    x: f64,
    y: f64,
    yaw: f64,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn translation(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    /// Planar part of a 3-D pose (translation x/y and Z-Y-X yaw).
    pub fn from_pose3(pose: &Pose3) -> Self {
        let (_, _, yaw) = pose.euler_angles();
        Self::new(pose.translation.x, pose.translation.y, yaw)
    }

    pub fn to_pose3(&self, z: f64) -> Pose3 {
        Pose3::from_euler(0.0, 0.0, self.yaw, Vector3::new(self.x, self.y, z))
    }

    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let p = self.transform_point(&other.translation());
        Pose2::new(p.x, p.y, self.yaw + other.yaw)
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2::new(
            -(c * self.x + s * self.y),
            -(-s * self.x + c * self.y),
            -self.yaw,
        )
    }

    pub fn transform_point(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.yaw.sin_cos();
        Vector2::new(c * p.x - s * p.y + self.x, s * p.x + c * p.y + self.y)
    }

    /// Planar distance between the two translations.
    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Identifier used for clouds merged from several sensors.
pub const MERGED_SOURCE: u32 = u32::MAX;

/// Timestamped 3-D points from one LiDAR (or a merge of several).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub timestamp: f64,
    pub source_id: u32,
    pub points: Vec<Point3>,
    /// Per-point acquisition time in seconds, same clock as `timestamp`.
    pub times: Vec<f64>,
}

impl PointCloud {
    pub fn new(timestamp: f64, source_id: u32) -> Self {
        Self {
            timestamp,
            source_id,
            points: Vec::new(),
            times: Vec::new(),
        }
    }

    pub fn with_capacity(timestamp: f64, source_id: u32, capacity: usize) -> Self {
        Self {
            timestamp,
            source_id,
            points: Vec::with_capacity(capacity),
            times: Vec::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, point: Point3, time: f64) {
        self.points.push(point);
        self.times.push(time);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point3, f64)> + '_ {
        self.points.iter().zip(self.times.iter().copied())
    }

    /// Same points expressed in another frame.
    pub fn transformed(&self, pose: &Pose3) -> PointCloud {
        PointCloud {
            timestamp: self.timestamp,
            source_id: self.source_id,
            points: self
                .points
                .iter()
                .map(|p| pose.transform_point(p))
                .collect(),
            times: self.times.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.times.len() {
            return Err(Error::invalid(format!(
                "cloud has {} points but {} timestamps",
                self.points.len(),
                self.times.len()
            )));
        }
        if let Some(p) = self
            .points
            .iter()
            .find(|p| !p.iter().all(|v| v.is_finite()))
        {
            return Err(Error::invalid(format!("non-finite point {p:?}")));
        }
        Ok(())
    }
}

/// Re-express every point as if it had been observed at `reference_time`.
///
/// `pose_at(t)` maps the sensor frame at time `t` into a fixed frame; each
/// point becomes `T(t_ref)^-1 * T(t_p) * p`.
pub fn motion_compensate<F>(
    cloud: &PointCloud,
    pose_at: F,
    reference_time: f64,
) -> Result<PointCloud>
where
    F: Fn(f64) -> Result<Pose3>,
{
    let reference_inv = pose_at(reference_time)?.inverse();
    let mut out = PointCloud::with_capacity(reference_time, cloud.source_id, cloud.len());
    for (p, t) in cloud.iter() {
        let relative = reference_inv.compose(&pose_at(t)?);
        out.push(relative.transform_point(p), reference_time);
    }
    Ok(out)
}

/// Express every cloud in frame `BG` and concatenate them.
pub fn merge_clouds(clouds: &[PointCloud], extrinsics: &[Pose3]) -> Result<PointCloud> {
    if clouds.len() != extrinsics.len() {
        return Err(Error::invalid(format!(
            "{} clouds but {} extrinsics",
            clouds.len(),
            extrinsics.len()
        )));
    }
    let total = clouds.iter().map(PointCloud::len).sum();
    let timestamp = clouds
        .iter()
        .map(|c| c.timestamp)
        .fold(None, |acc: Option<f64>, t| {
            Some(acc.map_or(t, |a| a.max(t)))
        })
        .unwrap_or(0.0);
    let source_id = match clouds {
        [single] => single.source_id,
        _ => MERGED_SOURCE,
    };
    let mut merged = PointCloud::with_capacity(timestamp, source_id, total);
    for (cloud, extrinsic) in clouds.iter().zip(extrinsics) {
        for (p, t) in cloud.iter() {
            merged.push(extrinsic.transform_point(p), t);
        }
    }
    Ok(merged)
}

/// Timestamped pose samples with linear/slerp interpolation between them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    samples: Vec<(f64, Pose3)>,
}

impl Trajectory {
    pub fn new(samples: Vec<(f64, Pose3)>) -> Result<Self> {
        if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::invalid(
                "trajectory timestamps must be strictly increasing",
            ));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(f64, Pose3)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn start_time(&self) -> Option<f64> {
        self.samples.first().map(|s| s.0)
    }

    pub fn end_time(&self) -> Option<f64> {
        self.samples.last().map(|s| s.0)
    }

    pub fn pose_at(&self, time: f64) -> Result<Pose3> {
        let (start, end) = match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => (a.0, b.0),
            _ => {
                return Err(Error::InterpolationDomain {
                    time,
                    start: f64::NAN,
                    end: f64::NAN,
                })
            }
        };
        if !(start..=end).contains(&time) {
            return Err(Error::InterpolationDomain { time, start, end });
        }
        let upper = self.samples.partition_point(|s| s.0 < time);
        if upper == 0 {
            return Ok(self.samples[0].1);
        }
        let (t0, p0) = &self.samples[upper - 1];
        let (t1, p1) = &self.samples[upper];
        if *t1 == time {
            return Ok(*p1);
        }
        Ok(Pose3::interpolate(p0, p1, (time - t0) / (t1 - t0)))
    }
}

/// Ideal (undistorted) pinhole camera.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let intrinsics = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intrinsics.validate()?;
        Ok(intrinsics)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        let inside = (0.0..=self.width as f64).contains(&self.cx)
            && (0.0..=self.height as f64).contains(&self.cy);
        if !inside {
            return Err(Error::invalid("principal point lies outside the image"));
        }
        Ok(())
    }

    /// Pixel coordinates of a camera-frame point, or `None` behind the camera.
    pub fn project(&self, p: &Point3) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Camera-frame point at pixel `(u, v)` with the given z-depth.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Point3 {
        self.ray(u, v) * depth
    }

    /// Un-normalized ray direction through pixel `(u, v)`, with z = 1.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}
