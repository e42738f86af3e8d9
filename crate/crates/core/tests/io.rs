mod common;

use common::*;
use hbev_core::geometry::Point3;
use hbev_core::io::*;
use hbev_core::{GridMap, GridSpec, Layer, PointCloud, Pose2, Pose3, Trajectory};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Layer with f32-representable values so the f32 file round trip is exact.
fn f32_layer(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Layer {
    let l = random_layer(rng, h, w, 0.6, -50.0, 50.0);
    l.map_valid(|v| v as f32 as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn map_round_trip(seed in 0u64..10_000, h in 1usize..20, w in 1usize..20, layers in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = GridSpec::new(h, w, rng.gen_range(0.05..1.0)).unwrap()
            .with_pose(Pose2::new(rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0), rng.gen_range(-3.0..3.0)));
        let mut map = GridMap::new(spec, rng.gen_range(0.0..1e4));
        for k in 0..layers {
            map.insert_layer(&format!("layer_{k}"), f32_layer(&mut rng, h, w)).unwrap();
        }
        let back = decode_map(&encode_map(&map)).unwrap();
        prop_assert_eq!(back.spec, map.spec);
        prop_assert_eq!(back.timestamp, map.timestamp);
        let names: Vec<&str> = map.layer_names().collect();
        prop_assert_eq!(back.layer_names().collect::<Vec<_>>(), names.clone());
        for name in names {
            let (a, b) = (map.require(name).unwrap(), back.require(name).unwrap());
            prop_assert_eq!(a.validity(), b.validity());
            for (i, v) in a.iter_valid() {
                prop_assert_eq!(b.at(i).unwrap().to_bits(), v.to_bits());
            }
        }
        // encoding is a pure function of the map
        prop_assert_eq!(encode_map(&back), encode_map(&map));
    }

    #[test]
    fn cloud_round_trip(seed in 0u64..10_000, n in 0usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t0 = rng.gen_range(0.0..1000.0f64).round();
        let mut cloud = PointCloud::new(t0, rng.gen_range(0..8));
        for _ in 0..n {
            let p = Point3::new(rng.gen_range(-30.0..30.0f32) as f64, rng.gen_range(-30.0..30.0f32) as f64, rng.gen_range(-3.0..5.0f32) as f64);
            cloud.push(p, t0 + rng.gen_range(0.0..0.1f32) as f64);
        }
        let back = decode_cloud(&encode_cloud(&cloud)).unwrap();
        prop_assert_eq!(back.points, cloud.points);
        prop_assert_eq!(back.source_id, cloud.source_id);
        for (a, b) in back.times.iter().zip(&cloud.times) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn corrupted_inputs_are_rejected() {
    let mut map = GridMap::new(GridSpec::new(3, 3, 0.5).unwrap(), 1.0);
    map.insert_layer("elevation", Layer::filled(3, 3, 1.0))
        .unwrap();
    let bytes = encode_map(&map);
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(decode_map(&bad_magic).is_err());
    let mut bad_version = bytes.clone();
    bad_version[4] = 9;
    assert!(decode_map(&bad_version).is_err());
    assert!(decode_map(&bytes[..bytes.len() - 1]).is_err());
    let mut trailing = bytes;
    trailing.push(0);
    assert!(decode_map(&trailing).is_err());
    assert!(decode_cloud(b"HBPC").is_err());
    assert!(decode_tensor(&[]).is_err());
}

#[test]
fn files_round_trip_and_report_paths() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut map = GridMap::new(GridSpec::new(5, 7, 0.2).unwrap(), 3.0);
    map.insert_layer("traversability", f32_layer(&mut rng, 5, 7))
        .unwrap();
    let path = dir.path().join("nested/map.hbgm");
    write_map(&path, &map).unwrap();
    assert_eq!(
        read_map(&path)
            .unwrap()
            .require("traversability")
            .unwrap()
            .validity(),
        map.require("traversability").unwrap().validity()
    );
    assert_eq!(
        std::fs::read_dir(path.parent().unwrap()).unwrap().count(),
        1
    );

    let samples = (0..5)
        .map(|i| {
            (
                i as f64 * 0.5,
                Pose3::from_euler(
                    0.01 * i as f64,
                    0.0,
                    0.3 * i as f64,
                    Vector3::new(i as f64, 2.0, 0.1),
                ),
            )
        })
        .collect();
    let trajectory = Trajectory::new(samples).unwrap();
    let tpath = dir.path().join("trajectory.csv");
    write_trajectory(&tpath, &trajectory).unwrap();
    let back = read_trajectory(&tpath).unwrap();
    for ((ta, pa), (tb, pb)) in trajectory.samples().iter().zip(back.samples()) {
        assert_eq!(ta, tb);
        assert!((pa.translation - pb.translation).norm() < 1e-12);
        assert!(pa.rotation.angle_to(&pb.rotation) < 1e-12);
    }

    let tensor = Tensor::new(vec![2, 3, 4], (0..24).map(|i| i as f32 * 0.5).collect()).unwrap();
    let npath = dir.path().join("logits.bin");
    write_tensor(&npath, &tensor).unwrap();
    assert_eq!(read_tensor(&npath).unwrap(), tensor);

    let missing = dir.path().join("absent.hbgm");
    let message = read_map(&missing).unwrap_err().to_string();
    assert!(message.contains("absent.hbgm"), "{message}");
}
