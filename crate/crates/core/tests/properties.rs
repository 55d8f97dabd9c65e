//! Randomized invariant checks over the public API.

use proptest::prelude::*;

use pointfit_core::geometry::{
    camera_to_image, fuse_views, image_to_camera, CameraIntrinsics, RigidTransform, ViewMaps,
    CH_MASK, CH_X, CH_Y, CH_Z,
};
use pointfit_core::math::Vec3;
use pointfit_core::mesh::{densify, unit_cube};
use pointfit_core::metrics::{brute_force_nearest, build_index, shape_error, DEFAULT_LEAF_SIZE};
use pointfit_core::pool::{SerialPool, TaskPool};
use pointfit_core::rng::Pcg32;
use pointfit_core::splat::{pseudo_render_view, SplatConfig};
use pointfit_core::PointCloud;

fn finite_coord() -> impl Strategy<Value = f64> {
    -10.0..10.0f64
}

fn camera() -> impl Strategy<Value = CameraIntrinsics> {
    (
        0.5..50.0f64,
        0.5..50.0f64,
        -20.0..20.0f64,
        -20.0..20.0f64,
        any::<bool>(),
    )
        .prop_map(|(fx, fy, cx, cy, ortho)| {
            if ortho {
                CameraIntrinsics::orthographic(fx, fy, cx, cy)
            } else {
                CameraIntrinsics::perspective(fx, fy, cx, cy)
            }
        })
}

fn rotation() -> impl Strategy<Value = RigidTransform> {
    (any::<u64>(), finite_coord(), finite_coord(), finite_coord()).prop_map(|(seed, x, y, z)| {
        let mut rng = Pcg32::new(seed, 1);
        let mut t = pointfit_core::geometry::random_rotation(&mut rng);
        t.translation = Vec3::new(x, y, z);
        t
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn camera_round_trip_recovers_pixels(
        k in camera(),
        t in rotation(),
        u in -100.0..100.0f64,
        v in -100.0..100.0f64,
        z in 0.1..50.0f64,
    ) {
        let cam = image_to_camera(&k, u, v, z).unwrap();
        let p = t.apply_inverse(cam);
        let (u2, v2, z2) = camera_to_image(&k, &t, p).expect("depth is positive");
        prop_assert!((u - u2).abs() < 1e-6 * (1.0 + u.abs()));
        prop_assert!((v - v2).abs() < 1e-6 * (1.0 + v.abs()));
        prop_assert!((z - z2).abs() < 1e-9 * (1.0 + z.abs()));
    }

    #[test]
    fn splat_is_invariant_to_point_order(seed in any::<u64>(), n in 1usize..200) {
        let mut rng = Pcg32::new(seed, 9);
        let points: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(
                rng.uniform() * 2.0 - 1.0,
                rng.uniform() * 2.0 - 1.0,
                rng.uniform() * 2.0 - 1.0,
            ))
            .collect();
        let cloud = PointCloud::new(points.clone());
        let mut reversed = points;
        reversed.reverse();
        let rev_cloud = PointCloud::new(reversed);

        let k = CameraIntrinsics::orthographic_centered(32, 32, 2.5);
        let view = RigidTransform::new(
            pointfit_core::math::Mat3::IDENTITY,
            Vec3::new(0.0, 0.0, 2.0),
        );
        let cfg = SplatConfig { height: 32, width: 32, upsample: 3, z_near: 1e-6, beta: 2.0 };
        let a = pseudo_render_view(&cloud, &k, &view, &cfg).unwrap();
        let b = pseudo_render_view(&rev_cloud, &k, &view, &cfg).unwrap();

        // Winner indices differ under permutation; rendered images and
        // collision counts must not.
        prop_assert_eq!(&a.depth, &b.depth);
        prop_assert_eq!(&a.mask, &b.mask);
        prop_assert_eq!(a.stats.collisions, b.stats.collisions);
        prop_assert_eq!(a.stats.occupied, b.stats.occupied);
        for (d, &valid) in a.depth.depth.iter().zip(&a.depth.valid) {
            if valid {
                prop_assert!(*d > 0.0);
            }
        }
        for &p in &a.mask.probability {
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn tree_query_matches_brute_force(seed in any::<u64>(), n in 1usize..300) {
        let mut rng = Pcg32::new(seed, 4);
        let points: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.uniform(), rng.uniform(), rng.uniform()))
            .collect();
        let cloud = PointCloud::new(points.clone());
        let index = build_index(&cloud, DEFAULT_LEAF_SIZE).unwrap();
        for _ in 0..20 {
            let q = Vec3::new(
                rng.uniform() * 2.0 - 0.5,
                rng.uniform() * 2.0 - 0.5,
                rng.uniform() * 2.0 - 0.5,
            );
            let (ti, td) = index.query(q);
            let (bi, bd) = brute_force_nearest(&points, q);
            prop_assert_eq!(ti, bi);
            prop_assert_eq!(td.to_bits(), bd.to_bits());
        }
    }

    #[test]
    fn cube_samples_lie_on_the_surface(seed in any::<u64>()) {
        let samples = densify(&unit_cube(), 500, seed).unwrap();
        for p in &samples.points.points {
            let m = p.x.abs().max(p.y.abs()).max(p.z.abs());
            prop_assert!((m - 0.5).abs() < 1e-12, "off-surface sample {p:?}");
            prop_assert!(p.x.abs() <= 0.5 + 1e-12);
            prop_assert!(p.y.abs() <= 0.5 + 1e-12);
            prop_assert!(p.z.abs() <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn shape_error_is_rigid_invariant(seed in any::<u64>(), t in rotation()) {
        let samples = densify(&unit_cube(), 400, seed).unwrap();
        let mut rng = Pcg32::new(seed, 13);
        let pred = PointCloud::new(
            (0..250)
                .map(|_| Vec3::new(
                    rng.uniform() - 0.5,
                    rng.uniform() - 0.5,
                    rng.uniform() - 0.5,
                ))
                .collect(),
        );
        let base = shape_error(&pred, &samples, &SerialPool).unwrap();

        let moved_pred = PointCloud::new(pred.points.iter().map(|&p| t.apply(p)).collect());
        let mut moved_samples = samples.clone();
        moved_samples.points = PointCloud::new(samples.points.points.iter().map(|&p| t.apply(p)).collect());
        let moved = shape_error(&moved_pred, &moved_samples, &SerialPool).unwrap();

        prop_assert!((base.pred_to_gt - moved.pred_to_gt).abs() < 1e-9);
        prop_assert!((base.gt_to_pred - moved.gt_to_pred).abs() < 1e-9);
    }
}

// Non-proptest integration checks that exercise the public API end to end.

#[test]
fn fusion_reconstructs_a_known_cloud() {
    // Two views of the same 3 points, encoded exactly; fusion must return
    // each point once per view in (view, row, col) order.
    let k = CameraIntrinsics::orthographic(10.0, 10.0, 7.5, 7.5);
    let t0 = RigidTransform::IDENTITY;
    let mut rng = Pcg32::new(5, 2);
    let mut t1 = pointfit_core::geometry::random_rotation(&mut rng);
    t1.translation = Vec3::new(0.1, -0.2, 3.0);

    let targets = [
        Vec3::new(0.05, -0.1, 0.4),
        Vec3::new(-0.2, 0.15, 0.6),
        Vec3::new(0.0, 0.0, 0.5),
    ];

    let mut maps = ViewMaps::zeros(vec![t0, t1], 2, 2);
    for (view, t) in [t0, t1].iter().enumerate() {
        for (i, &p) in targets.iter().enumerate() {
            let (row, col) = (i / 2, i % 2);
            let (u, v, z) = camera_to_image(&k, t, p).unwrap();
            maps.set(view, CH_X, row, col, u);
            maps.set(view, CH_Y, row, col, v);
            maps.set(view, CH_Z, row, col, z);
            maps.set(view, CH_MASK, row, col, 5.0);
        }
        // Fourth pixel: discarded by threshold.
        maps.set(view, CH_MASK, 1, 1, -5.0);
    }

    let cloud = fuse_views(&maps, &k, 0.5).unwrap();
    assert_eq!(cloud.len(), 6);
    for (i, &p) in cloud.points.iter().enumerate() {
        let target = targets[i % 3];
        assert!((p - target).norm() < 1e-9, "point {i}: {p:?} vs {target:?}");
    }
}

#[test]
fn pool_results_do_not_depend_on_execution_order() {
    struct ScrambledPool;
    impl TaskPool for ScrambledPool {
        fn run_boxed(&self, count: usize, task: &(dyn Fn(usize) + Sync)) {
            let mut order: Vec<usize> = (0..count).collect();
            // Deterministic scramble.
            let mut rng = Pcg32::new(count as u64, 17);
            for i in (1..order.len()).rev() {
                let j = rng.below(i as u32 + 1) as usize;
                order.swap(i, j);
            }
            for i in order {
                task(i);
            }
        }
    }

    let samples = densify(&unit_cube(), 3000, 1).unwrap();
    let mut rng = Pcg32::new(2, 3);
    let pred = PointCloud::new(
        (0..1500)
            .map(|_| Vec3::new(rng.uniform(), rng.uniform(), rng.uniform()))
            .collect(),
    );
    let serial = shape_error(&pred, &samples, &SerialPool).unwrap();
    let scrambled = shape_error(&pred, &samples, &ScrambledPool).unwrap();
    assert_eq!(serial.pred_to_gt.to_bits(), scrambled.pred_to_gt.to_bits());
    assert_eq!(serial.gt_to_pred.to_bits(), scrambled.gt_to_pred.to_bits());
}
