mod common;

use common::*;
use hbev_core::gridmap::{ELEVATION, RELIABILITY, TRAVERSABILITY};
use hbev_core::hindsight::{compute_hindsight, select_window, FusionPolicy};
use hbev_core::metrics::{hazard_classify, hazard_prf, mae, observed_mask};
use hbev_core::synthworld::*;
use hbev_core::{GridMap, GridSpec, Pose2, Pose3};
use nalgebra::Vector3;

fn wall_world() -> WorldSpec {
    WorldSpec::flat(0.0)
        .with_obstacles(vec![Obstacle {
            center: [13.0, 0.0],
            radius: 3.0,
            height: 6.0,
            cost: 1.0,
        }])
        .unwrap()
}

/// Smallest t > 0 with |origin + t dir - center| = r in the plane.
fn ray_circle(origin: (f64, f64), dir: (f64, f64), center: (f64, f64), r: f64) -> Option<f64> {
    let (ox, oy) = (origin.0 - center.0, origin.1 - center.1);
    let a = dir.0 * dir.0 + dir.1 * dir.1;
    let b = 2.0 * (ox * dir.0 + oy * dir.1);
    let c = ox * ox + oy * oy - r * r;
    let disc = b * b - 4.0 * a * c;
    (disc >= 0.0).then(|| (-b - disc.sqrt()) / (2.0 * a))
}

#[test]
fn beam_toward_wall_matches_analytic_intersection() {
    let world = wall_world();
    let origin = hbev_core::geometry::Point3::new(0.0, 0.0, 1.0);
    let hit = cast_ray(&world, &origin, &Vector3::x(), 25.0, 0.1).unwrap();
    assert!((hit.range - 10.0).abs() <= 0.1);
    for deg in [-12.0f64, -5.0, 3.0, 9.0] {
        let a = deg.to_radians();
        let dir = Vector3::new(a.cos(), a.sin(), 0.0);
        let expected = ray_circle((0.0, 0.0), (dir.x, dir.y), (13.0, 0.0), 3.0).unwrap();
        let hit = cast_ray(&world, &origin, &dir, 25.0, 0.1).unwrap();
        assert!(
            (hit.range - expected).abs() <= 0.1,
            "{deg}: {} vs {expected}",
            hit.range
        );
    }
}

#[test]
fn tall_obstacle_casts_a_shadow() {
    let world = wall_world();
    let pose = Pose3::identity();
    let sensor = SensorSpec::default();
    let cloud = simulate_scan(&world, &pose, &sensor, 0.0).transformed(&sensor.extrinsic());
    let mut behind = 0;
    let mut opposite = 0;
    for p in &cloud.points {
        let dist = p.xy().norm();
        // every ray whose bearing passes through the cylinder stops at it
        let bearing_hits =
            ray_circle((0.0, 0.0), (p.x / dist, p.y / dist), (13.0, 0.0), 3.0).is_some();
        if bearing_hits && p.x > 0.0 {
            let t = ray_circle((0.0, 0.0), (p.x / dist, p.y / dist), (13.0, 0.0), 3.0).unwrap();
            assert!(dist <= t + 0.1, "point at {p:?} lies in the shadow");
            if dist >= t - 0.1 {
                behind += 1;
            }
        }
        if p.x < -12.0 && p.y.abs() < 3.0 {
            opposite += 1;
        }
    }
    assert!(behind > 0, "some beams should hit the obstacle face");
    assert!(
        opposite > 0,
        "ground at the same range on the open side is visible"
    );

    let spec = GridSpec::new(200, 200, 0.2).unwrap();
    let mask = observed_mask(&spec, &cloud);
    for row in 0..200 {
        for col in 0..200 {
            let (x, y) = center_of(&spec, row, col);
            if x > 16.5 && y.abs() < 1.0 {
                assert!(!mask[spec.index(row, col)]);
            }
        }
    }
}

#[test]
fn bump_oracle_matches_closed_form() {
    let bumps = vec![
        Bump {
            center: [1.0, -2.0],
            amplitude: 0.8,
            radius: 5.0,
        },
        Bump {
            center: [-3.0, 2.5],
            amplitude: -0.4,
            radius: 3.0,
        },
    ];
    let desc = WorldDescription {
        seed: 0,
        extent: 40.0,
        ground_height: 0.3,
        bumps: bumps.clone(),
        obstacles: vec![],
    };
    let world = WorldSpec::new(desc, Default::default()).unwrap();
    let spec = GridSpec::new(50, 40, 0.25).unwrap();
    let pose = Pose2::new(0.4, -0.7, 0.3);
    let map = oracle_maps(&world, &pose, &spec);
    let elevation = map.require(ELEVATION).unwrap();
    assert_eq!(elevation.count_valid(), 2000);
    for row in 0..50 {
        for col in 0..40 {
            let (lx, ly) = center_of(&spec, row, col);
            let (s, c) = 0.3f64.sin_cos();
            let (x, y) = (0.4 + c * lx - s * ly, -0.7 + s * lx + c * ly);
            let mut h = 0.3;
            for b in &bumps {
                let d2 = (x - b.center[0]).powi(2) + (y - b.center[1]).powi(2);
                if d2 < b.radius * b.radius {
                    h += b.amplitude * (1.0 - d2 / (b.radius * b.radius)).powi(2);
                }
            }
            assert!((elevation.get(row, col).unwrap().0 - h).abs() < 1e-12);
        }
    }
}

#[test]
fn dense_flat_scan_is_accurate_and_valid_where_hit() {
    let world = WorldSpec::flat(0.5);
    let sensor = SensorSpec {
        azimuth_resolution_deg: 0.25,
        channels: 32,
        ..SensorSpec::default()
    };
    let base = world.ground_pose(0.0, 0.0, 0.3);
    let spec = GridSpec::new(128, 128, 0.2).unwrap();
    let cloud = simulate_scan(&world, &base, &sensor, 0.0).transformed(&sensor.extrinsic());
    let estimate = estimate_maps(std::slice::from_ref(&cloud), &base, &spec, &sensor, &world);
    let oracle = oracle_maps(&world, &Pose2::from_pose3(&base), &spec);
    let e = estimate.require(ELEVATION).unwrap();
    let o = oracle.require(ELEVATION).unwrap();
    assert!(e.count_valid() > 1000);
    for (i, v) in e.iter_valid() {
        assert!((v - o.at(i).unwrap()).abs() < spec.resolution);
    }
    let mask = observed_mask(&estimate.spec.with_pose(Pose2::identity()), &cloud);
    for name in [ELEVATION, TRAVERSABILITY, RELIABILITY] {
        assert_eq!(estimate.require(name).unwrap().validity(), &mask[..]);
    }
}

#[test]
fn generation_and_simulation_are_deterministic() {
    let config = WorldGenConfig {
        duration: 4.0,
        ..WorldGenConfig::default()
    };
    let a = WorldSpec::generate(&config).unwrap();
    let b = WorldSpec::generate(&config).unwrap();
    assert_eq!(a, b);
    let sensor = SensorSpec::default();
    let spec = GridSpec::new(64, 64, 0.2).unwrap();
    let sa = simulate_step(&a, &sensor, &spec, 3).unwrap();
    let sb = simulate_step(&b, &sensor, &spec, 3).unwrap();
    assert_eq!(sa.cloud, sb.cloud);
    for name in [ELEVATION, TRAVERSABILITY, RELIABILITY] {
        assert!(layers_identical(
            sa.estimate.require(name).unwrap(),
            sb.estimate.require(name).unwrap()
        ));
    }
    let other = WorldSpec::generate(&WorldGenConfig { seed: 8, ..config }).unwrap();
    assert_ne!(a.description, other.description);
}

fn scores(step: &DatasetStep, map: &GridMap) -> (f64, f64) {
    let prior = step.bg_pose.translation.z;
    let elevation = map.require(ELEVATION).unwrap().fill_invalid(prior);
    let hazard = hazard_classify(&map.require(TRAVERSABILITY).unwrap().fill_invalid(0.0), 0.9);
    let truth = hazard_classify(step.oracle.require(TRAVERSABILITY).unwrap(), 0.9);
    (
        mae(step.oracle.require(ELEVATION).unwrap(), &elevation).unwrap(),
        hazard_prf(&truth, &hazard).unwrap().recall.unwrap_or(0.0),
    )
}

#[test]
fn longer_windows_improve_the_labels() {
    let world = WorldSpec::generate(&WorldGenConfig {
        trajectory: TrajectoryKind::Line,
        duration: 40.0,
        obstacles: 6,
        ..WorldGenConfig::default()
    })
    .unwrap();
    let spec = GridSpec::new(128, 128, 0.2).unwrap();
    let steps = simulate_all(&world, &SensorSpec::default(), &spec).unwrap();
    let maps: Vec<GridMap> = steps.iter().map(|s| s.estimate.clone()).collect();
    let policy = FusionPolicy::default();
    let step = &steps[steps.len() / 2];
    let (single_mae, _) = scores(step, &step.estimate);
    let mut last_recall = 0.0;
    for window in [0.0, 5.0, 10.0, 20.0, 40.0, 80.0] {
        let window_maps: Vec<GridMap> = select_window(&maps, step.time, window)
            .into_iter()
            .cloned()
            .collect();
        let fused = compute_hindsight(&window_maps, &step.estimate.spec, &policy).unwrap();
        let (m, recall) = scores(step, &fused);
        assert!(
            recall >= last_recall,
            "window {window}: recall {recall} < {last_recall}"
        );
        last_recall = recall;
        if window >= 40.0 {
            assert!(
                m < single_mae,
                "window {window}: {m} vs single {single_mae}"
            );
        }
    }
    assert!(last_recall > 0.0);
}
