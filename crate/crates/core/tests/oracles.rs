use nalgebra::Vector3;
use proptest::prelude::*;
use roadhazard::cstix::{adaptive_dbscan, dbscan_brute_force, linear_scan, RTree};
use roadhazard::disparity::CloudPoint;
use roadhazard::pc::{pc_brute_force, pc_detect};
use roadhazard::{CameraRig, ClusterParams, ObstaclePoint, PcParams, PointSource};

fn obstacle_point(rig: &CameraRig, x: f64, y: f64, z: f64) -> ObstaclePoint {
    let (u, v, d) = rig.project(&Vector3::new(x, y, z));
    ObstaclePoint {
        x: u.clamp(0.0, (rig.width - 1) as f64).round() as usize,
        y: v.clamp(0.0, (rig.height - 1) as f64).round() as usize,
        point: Vector3::new(x, y, z),
        disparity: d,
        source: PointSource::Fpht,
        cluster: None,
    }
}

prop_compose! {
    /// Blobs of obstacle points on top of uniform clutter.
    fn obstacle_cloud(max: usize)(
        blobs in prop::collection::vec((-8.0f64..8.0, 4.0f64..45.0, 5usize..60), 0..6),
        clutter in prop::collection::vec((-10.0f64..10.0, 0.0f64..1.5, 3.0f64..50.0), 0..max / 4),
        seed in any::<u64>(),
    ) -> Vec<ObstaclePoint> {
        use rand::{Rng, SeedableRng};
        let rig = CameraRig::automotive();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut pts: Vec<ObstaclePoint> =
            clutter.iter().map(|&(x, y, z)| obstacle_point(&rig, x, y, z)).collect();
        for (cx, cz, n) in blobs {
            for _ in 0..n {
                let (x, y, z) = (
                    cx + rng.random_range(-0.4..0.4),
                    rng.random_range(0.5..1.2),
                    cz + rng.random_range(-0.5..0.5),
                );
                pts.push(obstacle_point(&rig, x, y, z));
            }
        }
        pts.truncate(max);
        pts
    }
}

prop_compose! {
    fn scene_cloud(max: usize)(
        raw in prop::collection::vec((-3.0f64..3.0, 0.0f64..1.6, 1.0f64..15.0), 0..max),
        posts in prop::collection::vec((-2.0f64..2.0, 2.0f64..12.0, 2usize..15), 0..5),
    ) -> Vec<CloudPoint> {
        let rig = pc_rig();
        let mut pts: Vec<Vector3<f64>> = raw.into_iter().map(|(x, y, z)| Vector3::new(x, y, z)).collect();
        for (x, z, n) in posts {
            pts.extend((0..n).map(|k| Vector3::new(x, 1.2 - 0.05 * k as f64, z)));
        }
        pts.truncate(max);
        pts.iter()
            .enumerate()
            .map(|(i, p)| CloudPoint {
                x: i % rig.width,
                y: i / rig.width,
                disparity: rig.disparity_at_depth(p.z),
                point: *p,
            })
            .collect()
    }
}

fn pc_rig() -> CameraRig {
    CameraRig::new(400.0, 400.0, 200.0, 150.0, 0.25, 400, 300).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rtree_queries_match_linear_scan(
        coords in prop::collection::vec((-30.0f64..30.0, 0.0f64..80.0), 0..3000),
        boxes in prop::collection::vec((-35.0f64..35.0, -5.0f64..85.0, 0.0f64..15.0, 0.0f64..15.0), 1..20),
    ) {
        let coords: Vec<[f64; 2]> = coords.into_iter().map(|(x, z)| [x, z]).collect();
        let tree = RTree::bulk_load(coords.clone());
        prop_assert_eq!(tree.len(), coords.len());
        for (x, z, w, d) in boxes {
            let (min, max) = ([x, z], [x + w, z + d]);
            prop_assert_eq!(tree.query(min, max), linear_scan(&coords, min, max));
        }
    }

    #[test]
    fn adaptive_dbscan_matches_brute_force(points in obstacle_cloud(2000)) {
        let rig = CameraRig::automotive();
        let params = ClusterParams::default();
        prop_assert_eq!(adaptive_dbscan(&points, &params, &rig), dbscan_brute_force(&points, &params, &rig));
    }

    #[test]
    fn pc_detect_matches_brute_force(
        cloud in scene_cloud(1500),
        phi in 20.0f64..70.0,
        h_min in 0.02f64..0.3,
        extra in 0.05f64..1.0,
    ) {
        let params = PcParams { phi, h_min, h_max: h_min + extra };
        prop_assert_eq!(pc_detect(&cloud, &pc_rig(), &params), pc_brute_force(&cloud, &params));
    }

    #[test]
    fn dbscan_labels_are_dense(points in obstacle_cloud(800)) {
        let labels = adaptive_dbscan(&points, &ClusterParams::default(), &CameraRig::automotive());
        let used: std::collections::BTreeSet<usize> = labels.iter().flatten().copied().collect();
        prop_assert!(used.iter().copied().eq(0..used.len()));
    }
}
