//! Procedural terrain, obstacles and a ray-marched LiDAR.
//!
//! The world is a smooth heightfield (sum of compact polynomial bumps) with
//! opaque, flat-topped cylindrical obstacles, each carrying a
//! traversability cost. Generation is driven by one seeded RNG and scans
//! are pure functions of world and pose, so datasets are reproducible bit
//! for bit.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{gravity_align, Point3, PointCloud, Pose2, Pose3, Trajectory};
use crate::gridmap::{GridMap, GridSpec, Layer, ELEVATION, RELIABILITY, TRAVERSABILITY};

/// Compact bump `amplitude * (1 - (d / radius)^2)^2` for `d < radius`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: [f64; 2],
    pub amplitude: f64,
    pub radius: f64,
}

impl Bump {
    #[inline]
    fn height(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        let q = (dx * dx + dy * dy) / (self.radius * self.radius);
        if q < 1.0 {
            let s = 1.0 - q;
            self.amplitude * s * s
        } else {
            0.0
        }
    }

    /// `(dh/dx, dh/dy)`.
    fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        let r2 = self.radius * self.radius;
        let q = (dx * dx + dy * dy) / r2;
        if q < 1.0 {
            let k = -4.0 * self.amplitude * (1.0 - q) / r2;
            (k * dx, k * dy)
        } else {
            (0.0, 0.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
    pub height: f64,
    /// Traversability cost in [0, 1].
    pub cost: f64,
}

impl Obstacle {
    #[inline]
    fn covers(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

/// Static description of the terrain and obstacles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldDescription {
    pub seed: u64,
    /// Side length of the square world, centered on the origin.
    pub extent: f64,
    pub ground_height: f64,
    pub bumps: Vec<Bump>,
    pub obstacles: Vec<Obstacle>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldSpec {
    pub description: WorldDescription,
    /// Vehicle base poses in the odometry frame.
    pub trajectory: Trajectory,
    /// Absolute height of each obstacle's top.
    tops: Vec<f64>,
    max_height: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    /// Closed circle around the origin, counter-clockwise.
    Loop,
    /// Straight drive along +x through the origin.
    Line,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loop" => Ok(Self::Loop),
            "line" => Ok(Self::Line),
            other => Err(Error::invalid(format!(
                "unknown trajectory type `{other}` (loop, line)"
            ))),
        }
    }
}

/// Parameters of the procedural world generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldGenConfig {
    pub seed: u64,
    pub extent: f64,
    pub obstacles: usize,
    pub bumps: usize,
    pub trajectory: TrajectoryKind,
    /// Trajectory duration in seconds.
    pub duration: f64,
    /// Dataset sample rate in Hz.
    pub rate: f64,
    /// Loop radius, or half the line length.
    pub path_radius: f64,
}

impl Default for WorldGenConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            extent: 80.0,
            obstacles: 10,
            bumps: 8,
            trajectory: TrajectoryKind::Loop,
            duration: 120.0,
            rate: 2.0,
            path_radius: 15.0,
        }
    }
}

impl WorldGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.extent > 0.0)
            || !(self.duration > 0.0)
            || !(self.rate > 0.0)
            || !(self.path_radius > 0.0)
        {
            return Err(Error::invalid(
                "world extent, duration, rate and path radius must be positive",
            ));
        }
        Ok(())
    }

    pub fn sample_times(&self) -> Vec<f64> {
        let n = (self.duration * self.rate).floor() as usize;
        (0..=n).map(|i| i as f64 / self.rate).collect()
    }
}

impl WorldSpec {
    pub fn new(description: WorldDescription, trajectory: Trajectory) -> Result<Self> {
        for o in &description.obstacles {
            if !(0.0..=1.0).contains(&o.cost) {
                return Err(Error::invalid(format!(
                    "obstacle cost {} is outside [0, 1]",
                    o.cost
                )));
            }
            if !(o.radius > 0.0) || !(o.height >= 0.0) {
                return Err(Error::invalid(
                    "obstacle radius must be positive and height non-negative",
                ));
            }
        }
        let mut world = Self {
            description,
            trajectory,
            tops: Vec::new(),
            max_height: 0.0,
        };
        world.tops = world
            .description
            .obstacles
            .iter()
            .map(|o| world.terrain_height(o.center[0], o.center[1]) + o.height)
            .collect();
        let bump_max: f64 = world
            .description
            .bumps
            .iter()
            .map(|b| b.amplitude.max(0.0))
            .sum();
        let obstacle_max = world
            .description
            .obstacles
            .iter()
            .map(|o| o.height)
            .fold(0.0, f64::max);
        world.max_height = world.description.ground_height + bump_max + obstacle_max;
        Ok(world)
    }

    /// Flat ground at `ground_height`, no obstacles, no trajectory.
    pub fn flat(ground_height: f64) -> Self {
        Self::new(
            WorldDescription {
                seed: 0,
                extent: 100.0,
                ground_height,
                bumps: Vec::new(),
                obstacles: Vec::new(),
            },
            Trajectory::default(),
        )
        .expect("flat world is valid")
    }

    pub fn with_obstacles(mut self, obstacles: Vec<Obstacle>) -> Result<Self> {
        self.description.obstacles = obstacles;
        Self::new(self.description, self.trajectory)
    }

    pub fn seed(&self) -> u64 {
        self.description.seed
    }

    /// Generate terrain, obstacles placed beside the path, and the path itself.
    pub fn generate(config: &WorldGenConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let half = config.extent / 2.0;

        let bumps = (0..config.bumps)
            .map(|_| Bump {
                center: [rng.gen_range(-half..half), rng.gen_range(-half..half)],
                amplitude: rng.gen_range(-1.0..1.5),
                radius: rng.gen_range(8.0..20.0),
            })
            .collect();

        let mut obstacles = Vec::with_capacity(config.obstacles);
        for i in 0..config.obstacles {
            // alternate rocks and low, cheaper mounds
            let (radius, height, cost) = if i % 2 == 0 {
                (rng.gen_range(0.6..1.4), rng.gen_range(0.6..1.5), 1.0)
            } else {
                (
                    rng.gen_range(1.5..3.0),
                    rng.gen_range(0.15..0.4),
                    rng.gen_range(0.2..0.6),
                )
            };
            // beside the path, never on it
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let offset = side * (radius + rng.gen_range(2.0..7.0));
            let s = (i as f64 + rng.gen_range(0.0..0.8)) / config.obstacles as f64;
            let center = match config.trajectory {
                TrajectoryKind::Loop => {
                    let theta = s * TAU;
                    let r = config.path_radius + offset;
                    [r * theta.cos(), r * theta.sin()]
                }
                TrajectoryKind::Line => [(2.0 * s - 1.0) * config.path_radius, offset],
            };
            obstacles.push(Obstacle {
                center,
                radius,
                height,
                cost,
            });
        }

        let description = WorldDescription {
            seed: config.seed,
            extent: config.extent,
            ground_height: 0.0,
            bumps,
            obstacles,
        };
        let terrain = Self::new(description, Trajectory::default())?;
        let samples = config
            .sample_times()
            .into_iter()
            .map(|t| (t, terrain.path_pose(config, t)))
            .collect();
        let trajectory = Trajectory::new(samples)?;
        Self::new(terrain.description, trajectory)
    }

    fn path_pose(&self, config: &WorldGenConfig, t: f64) -> Pose3 {
        let (x, y, yaw) = match config.trajectory {
            TrajectoryKind::Loop => {
                let theta = TAU * t / config.duration;
                let r = config.path_radius;
                (r * theta.cos(), r * theta.sin(), theta + PI / 2.0)
            }
            TrajectoryKind::Line => {
                let speed = 2.0 * config.path_radius / config.duration;
                (-config.path_radius + speed * t, 0.0, 0.0)
            }
        };
        self.ground_pose(x, y, yaw)
    }

    /// Vehicle pose resting on the terrain at `(x, y)` with heading `yaw`.
    pub fn ground_pose(&self, x: f64, y: f64, yaw: f64) -> Pose3 {
        let (gx, gy) = self.terrain_gradient(x, y);
        let (s, c) = yaw.sin_cos();
        let forward_slope = c * gx + s * gy;
        let left_slope = -s * gx + c * gy;
        Pose3::from_euler(
            left_slope.atan(),
            -forward_slope.atan(),
            yaw,
            Vector3::new(x, y, self.terrain_height(x, y)),
        )
    }

    #[inline]
    pub fn terrain_height(&self, x: f64, y: f64) -> f64 {
        self.description.ground_height
            + self
                .description
                .bumps
                .iter()
                .map(|b| b.height(x, y))
                .sum::<f64>()
    }

    pub fn terrain_gradient(&self, x: f64, y: f64) -> (f64, f64) {
        self.description
            .bumps
            .iter()
            .map(|b| b.gradient(x, y))
            .fold((0.0, 0.0), |a, g| (a.0 + g.0, a.1 + g.1))
    }

    /// Height of the opaque surface: terrain raised to the top of any
    /// obstacle covering `(x, y)`. This is the exact elevation ground truth.
    #[inline]
    pub fn surface_height(&self, x: f64, y: f64) -> f64 {
        let mut h = self.terrain_height(x, y);
        for (o, &top) in self.description.obstacles.iter().zip(&self.tops) {
            if o.covers(x, y) {
                h = h.max(top);
            }
        }
        h
    }

    /// Highest cost of any obstacle covering `(x, y)`, 0 on open ground.
    pub fn cost_at(&self, x: f64, y: f64) -> f64 {
        self.description
            .obstacles
            .iter()
            .filter(|o| o.covers(x, y))
            .map(|o| o.cost)
            .fold(0.0, f64::max)
    }
}

/// Exact elevation and traversability sampled at every cell center.
pub fn oracle_maps(world: &WorldSpec, pose: &Pose2, spec: &GridSpec) -> GridMap {
    let spec = spec.with_pose(*pose);
    let (h, w) = (spec.height_cells, spec.width_cells);
    let mut elevation = Layer::new(h, w);
    let mut traversability = Layer::new(h, w);
    for row in 0..h {
        for col in 0..w {
            let p = pose.transform_point(&spec.cell_center(row, col));
            let i = spec.index(row, col);
            elevation.set_index(i, world.surface_height(p.x, p.y));
            traversability.set_index(i, world.cost_at(p.x, p.y));
        }
    }
    let mut map = GridMap::new(spec, 0.0);
    map.insert_layer(ELEVATION, elevation)
        .expect("sized from spec");
    map.insert_layer(TRAVERSABILITY, traversability)
        .expect("sized from spec");
    map
}

/// Spinning multi-channel LiDAR and the per-timestep map estimator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSpec {
    pub channels: usize,
    /// Lowest and highest beam elevation in degrees.
    pub vertical_fov_deg: (f64, f64),
    pub azimuth_resolution_deg: f64,
    pub max_range: f64,
    pub rate_hz: f64,
    /// Height of the LiDAR above the vehicle base.
    pub mount_height: f64,
    /// Ray-march step in meters.
    pub march_step: f64,
    /// Point count at which reliability reaches 1 - 1/e.
    pub reliability_points: f64,
    /// Height spread inside a cell above which it is marked as a hazard.
    pub step_threshold: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            channels: 16,
            vertical_fov_deg: (-25.0, 5.0),
            azimuth_resolution_deg: 1.0,
            max_range: 25.0,
            rate_hz: 10.0,
            mount_height: 2.0,
            march_step: 0.1,
            reliability_points: 5.0,
            step_threshold: 0.3,
        }
    }
}

impl SensorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_range > 0.0) {
            return Err(Error::invalid("LiDAR max range must be positive"));
        }
        if self.channels == 0 || !(self.azimuth_resolution_deg > 0.0) || !(self.march_step > 0.0) {
            return Err(Error::invalid(
                "LiDAR needs channels, a positive azimuth step and march step",
            ));
        }
        if !(self.reliability_points > 0.0) {
            return Err(Error::invalid("reliability scale must be positive"));
        }
        Ok(())
    }

    /// LiDAR frame in the vehicle base frame.
    pub fn extrinsic(&self) -> Pose3 {
        Pose3::from_translation(Vector3::new(0.0, 0.0, self.mount_height))
    }

    pub fn beam_count(&self) -> usize {
        self.channels * self.azimuth_steps()
    }

    fn azimuth_steps(&self) -> usize {
        (360.0 / self.azimuth_resolution_deg).round().max(1.0) as usize
    }

    /// Unit beam direction in the LiDAR frame.
    pub fn beam_direction(&self, beam: usize) -> Vector3<f64> {
        let steps = self.azimuth_steps();
        let channel = beam / steps;
        let azimuth = (beam % steps) as f64 * TAU / steps as f64;
        let (lo, hi) = self.vertical_fov_deg;
        let elevation = if self.channels == 1 {
            lo
        } else {
            lo + (hi - lo) * channel as f64 / (self.channels - 1) as f64
        }
        .to_radians();
        Vector3::new(
            elevation.cos() * azimuth.cos(),
            elevation.cos() * azimuth.sin(),
            elevation.sin(),
        )
    }

    /// Saturating reliability of a cell hit by `points` returns.
    pub fn reliability(&self, points: usize) -> f64 {
        1.0 - (-(points as f64) / self.reliability_points).exp()
    }
}

/// First intersection of a beam with the surface.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub range: f64,
    pub point: Point3,
}

const BISECTION_ITERATIONS: usize = 12;

/// March a unit-direction ray in fixed steps until it drops below the
/// surface, then bisect the last step.
pub fn cast_ray(
    world: &WorldSpec,
    origin: &Point3,
    dir: &Vector3<f64>,
    max_range: f64,
    step: f64,
) -> Option<RayHit> {
    let below = |t: f64| {
        let p = origin + dir * t;
        p.z < world.surface_height(p.x, p.y)
    };
    if below(0.0) {
        return Some(RayHit {
            range: 0.0,
            point: *origin,
        });
    }
    let mut k: u64 = 0;
    let mut t_prev = 0.0;
    loop {
        k += 1;
        let t = (k as f64 * step).min(max_range);
        let p = origin + dir * t;
        if p.z < world.surface_height(p.x, p.y) {
            // refine the crossing inside (t_prev, t]
            let (mut lo, mut hi) = (t_prev, t);
            for _ in 0..BISECTION_ITERATIONS {
                let mid = 0.5 * (lo + hi);
                if below(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(RayHit {
                range: hi,
                point: origin + dir * hi,
            });
        }
        if t >= max_range || (dir.z >= 0.0 && p.z > world.max_height) {
            return None;
        }
        t_prev = t;
    }
}

/// One LiDAR sweep from the vehicle at `base_pose`, points in the LiDAR frame.
pub fn simulate_scan(
    world: &WorldSpec,
    base_pose: &Pose3,
    sensor: &SensorSpec,
    time: f64,
) -> PointCloud {
    let lidar = base_pose.compose(&sensor.extrinsic());
    let hits: Vec<Option<Point3>> = (0..sensor.beam_count())
        .into_par_iter()
        .map(|beam| {
            let local = sensor.beam_direction(beam);
            let dir = lidar.transform_vector(&local);
            cast_ray(
                world,
                &lidar.translation,
                &dir,
                sensor.max_range,
                sensor.march_step,
            )
            .map(|hit| local * hit.range)
        })
        .collect();
    let mut cloud = PointCloud::with_capacity(time, 0, hits.len());
    for p in hits.into_iter().flatten() {
        cloud.push(p, time);
    }
    cloud
}

/// Per-timestep elevation, traversability and reliability from recent scans.
///
/// `scans` are expressed in frame `BG`, whose pose in the odometry frame is
/// `bg_pose` (roll and pitch zero). Elevation is the lowest return per cell
/// in odometry-frame height; traversability is 1 where the returns in a
/// cell spread more than the step threshold, raised to the true obstacle
/// cost of observed cells; reliability saturates with the return count.
/// Cells without returns are invalid in every layer.
pub fn estimate_maps(
    scans: &[PointCloud],
    bg_pose: &Pose3,
    spec: &GridSpec,
    sensor: &SensorSpec,
    world: &WorldSpec,
) -> GridMap {
    let pose2 = Pose2::from_pose3(bg_pose);
    let spec = spec.with_pose(pose2);
    let n = spec.cell_count();
    let mut count = vec![0usize; n];
    let mut min_z = vec![f64::INFINITY; n];
    let mut max_z = vec![f64::NEG_INFINITY; n];
    for scan in scans {
        for p in &scan.points {
            if let Some((r, c)) = spec.world_to_cell(p.x, p.y) {
                let i = spec.index(r, c);
                let z = p.z + bg_pose.translation.z;
                count[i] += 1;
                min_z[i] = min_z[i].min(z);
                max_z[i] = max_z[i].max(z);
            }
        }
    }
    let (h, w) = (spec.height_cells, spec.width_cells);
    let mut elevation = Layer::new(h, w);
    let mut traversability = Layer::new(h, w);
    let mut reliability = Layer::new(h, w);
    for row in 0..h {
        for col in 0..w {
            let i = spec.index(row, col);
            if count[i] == 0 {
                continue;
            }
            let center = pose2.transform_point(&spec.cell_center(row, col));
            let step = if max_z[i] - min_z[i] > sensor.step_threshold {
                1.0
            } else {
                0.0
            };
            elevation.set_index(i, min_z[i]);
            traversability.set_index(i, f64::max(step, world.cost_at(center.x, center.y)));
            reliability.set_index(i, sensor.reliability(count[i]));
        }
    }
    let timestamp = scans.iter().map(|s| s.timestamp).fold(0.0, f64::max);
    let mut map = GridMap::new(spec, timestamp);
    map.insert_layer(ELEVATION, elevation)
        .expect("sized from spec");
    map.insert_layer(TRAVERSABILITY, traversability)
        .expect("sized from spec");
    map.insert_layer(RELIABILITY, reliability)
        .expect("sized from spec");
    map
}

/// Everything produced for one trajectory sample.
#[derive(Clone, Debug)]
pub struct DatasetStep {
    pub index: usize,
    pub time: f64,
    pub base_pose: Pose3,
    /// Gravity-aligned base frame in the odometry frame.
    pub bg_pose: Pose3,
    /// Scan expressed in `BG`.
    pub cloud: PointCloud,
    pub estimate: GridMap,
    pub oracle: GridMap,
}

/// Simulate, merge into `BG`, and estimate/oracle one trajectory sample.
pub fn simulate_step(
    world: &WorldSpec,
    sensor: &SensorSpec,
    spec: &GridSpec,
    index: usize,
) -> Result<DatasetStep> {
    let (time, base_pose) = *world
        .trajectory
        .samples()
        .get(index)
        .ok_or_else(|| Error::invalid(format!("trajectory has no sample {index}")))?;
    let bg_pose = gravity_align(&base_pose)?;
    let scan = simulate_scan(world, &base_pose, sensor, time);
    let lidar_to_bg = bg_pose
        .inverse()
        .compose(&base_pose)
        .compose(&sensor.extrinsic());
    let cloud = crate::geometry::merge_clouds(&[scan], &[lidar_to_bg])?;
    let mut estimate = estimate_maps(std::slice::from_ref(&cloud), &bg_pose, spec, sensor, world);
    estimate.timestamp = time;
    let mut oracle = oracle_maps(world, &Pose2::from_pose3(&bg_pose), spec);
    oracle.timestamp = time;
    Ok(DatasetStep {
        index,
        time,
        base_pose,
        bg_pose,
        cloud,
        estimate,
        oracle,
    })
}

/// [`simulate_step`] for every trajectory sample, in parallel.
pub fn simulate_all(
    world: &WorldSpec,
    sensor: &SensorSpec,
    spec: &GridSpec,
) -> Result<Vec<DatasetStep>> {
    (0..world.trajectory.len())
        .into_par_iter()
        .map(|i| simulate_step(world, sensor, spec, i))
        .collect()
}
