//! Invariants checked over generated inputs.

mod common;

use common::*;
use loopgraph::clustering::{cluster_class, extract_instances, fit_box};
use loopgraph::descriptor::{background_descriptor, foreground_descriptor, fuse, BevConfig};
use loopgraph::graph::{GraphConfig, SemanticGraph};
use loopgraph::pose::fit_rigid;
use loopgraph::scan_io::{ClassMap, SemanticScan};
use loopgraph::verification::hungarian;
use loopgraph::Pose;
use nalgebra::{DMatrix, Vector3};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

fn pose_strategy() -> impl Strategy<Value = Pose> {
    (
        prop::array::uniform3(-1.0f64..1.0),
        -3.1f64..3.1,
        prop::array::uniform3(-30.0f64..30.0),
    )
        .prop_filter_map("degenerate axis", |(a, angle, t)| {
            let axis = Vector3::from(a);
            (axis.norm() > 0.1)
                .then(|| Pose::from_rotation_vector(axis.normalize() * angle, Vector3::from(t)))
        })
}

fn point_strategy(half: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-half..half).prop_map(Vector3::from)
}

fn foreground_of(scan: &SemanticScan, classes: &ClassMap) -> Vec<f64> {
    let cfg = GraphConfig::default();
    let inst = extract_instances(scan, classes, 10);
    foreground_descriptor(
        &SemanticGraph::build(&inst, classes, cfg.d_max),
        &cfg,
        classes,
    )
}

fn yaw_scan(scan: &SemanticScan, yaw: f64) -> SemanticScan {
    scan.transformed(&Pose::from_yaw(yaw, Vector3::zeros()))
}

proptest! {
    #[test]
    fn pose_inverse_composes_to_identity(p in pose_strategy(), x in point_strategy(50.0)) {
        let id = p.compose(&p.inverse());
        prop_assert!((id.rotation - nalgebra::Matrix3::identity()).abs().max() < 1e-12);
        prop_assert!(id.translation.norm() < 1e-12);
        prop_assert!((p.inverse().transform_point(&p.transform_point(&x)) - x).norm() < 1e-10);
        prop_assert!(p.is_valid());
    }

    #[test]
    fn pose_text_round_trip(p in pose_strategy()) {
        let back = Pose::from_row_major_3x4(&p.to_row_major_3x4());
        prop_assert_eq!(back, p);
    }

    #[test]
    fn rigid_fit_recovers_noise_free_transform(
        p in pose_strategy(),
        pts in prop::collection::vec(point_strategy(10.0), 3..20),
    ) {
        let area = (pts[1] - pts[0]).cross(&(pts[2] - pts[0])).norm();
        prop_assume!(area > 1.0);
        let dst: Vec<_> = pts.iter().map(|x| p.transform_point(x)).collect();
        let fit = fit_rigid(&pts, &dst).unwrap();
        for (s, d) in pts.iter().zip(&dst) {
            prop_assert!((fit.transform_point(s) - d).norm() < 1e-9);
        }
        assert_rotation_valid(&fit);
    }

    #[test]
    fn assignment_beats_random_permutations(
        n in 1usize..12,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cost = DMatrix::from_fn(n, n, |_, _| rand::Rng::random_range(&mut rng, 0.0..1.0));
        let pairs = hungarian::assign(&cost);
        let best = row_ordered_cost(&cost, &pairs);
        let mut cols: Vec<usize> = (0..n).collect();
        for _ in 0..50 {
            cols.shuffle(&mut rng);
            let c: f64 = (0..n).map(|i| cost[(i, cols[i])]).sum();
            prop_assert!(best <= c + 1e-12);
        }
        let mut rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let mut used: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        rows.sort();
        used.sort();
        used.dedup();
        prop_assert_eq!(rows, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(used.len(), n);
    }

    #[test]
    fn clustering_ignores_point_order(
        pts in prop::collection::vec(point_strategy(5.0), 1..150),
        seed in any::<u64>(),
    ) {
        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let groups = |points: &[Vector3<f64>]| {
            let scan = SemanticScan::new(0, points.to_vec(), vec![ClassMap::POLE; points.len()]);
            let mut sets: Vec<Vec<[u64; 3]>> = cluster_class(&scan, ClassMap::POLE, 0.8, 1)
                .into_iter()
                .map(|inst| {
                    let mut s: Vec<[u64; 3]> = inst
                        .indices
                        .iter()
                        .map(|&i| [points[i].x.to_bits(), points[i].y.to_bits(), points[i].z.to_bits()])
                        .collect();
                    s.sort();
                    s
                })
                .collect();
            sets.sort();
            sets
        };
        prop_assert_eq!(groups(&pts), groups(&shuffled));
    }

    #[test]
    fn box_extents_are_non_negative_and_contain_center(
        pts in prop::collection::vec(point_strategy(4.0), 1..40),
    ) {
        let (c, b) = fit_box(&pts);
        for (axis, e) in [b.length, b.width, b.height].iter().enumerate() {
            prop_assert!(*e >= 0.0);
            let lo = pts.iter().map(|p| p[axis]).fold(f64::MAX, f64::min);
            prop_assert!(c[axis] >= lo && c[axis] <= lo + e + 1e-12);
        }
    }

    #[test]
    fn fuse_ignores_segment_scale(
        f in prop::collection::vec(0.0f64..5.0, 1..30),
        b in prop::collection::vec(0.0f64..1.0, 1..30),
        sf in 0.01f64..100.0,
        sb in 0.01f64..100.0,
    ) {
        let base = fuse(&f, &b);
        let scaled: Vec<f64> = f.iter().map(|v| v * sf).collect();
        let scaled_b: Vec<f64> = b.iter().map(|v| v * sb).collect();
        let other = fuse(&scaled, &scaled_b);
        for (x, y) in base.values.iter().zip(&other.values) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        for seg in [base.foreground(), base.background()] {
            let n: f64 = seg.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_descriptors_follow_node_permutation(seed in any::<u64>(), n in 2usize..25) {
        let classes = ClassMap::default();
        let cfg = GraphConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = random_graph(&mut rng, n, 60.0, &classes, cfg.d_max);
        prop_assume!(g.spectrum().unwrap().is_simple());
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let nodes = perm.iter().map(|&i| g.nodes[i].clone()).collect();
        let mut h = SemanticGraph::from_nodes(nodes, &classes, cfg.d_max);
        g.compute_descriptors(&cfg, &classes).unwrap();
        h.compute_descriptors(&cfg, &classes).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for (a, b) in h.nodes[k].descriptor.iter().zip(&g.nodes[i].descriptor) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn foreground_descriptor_is_rigid_invariant(seed in 0u64..1000, p in pose_strategy()) {
        let classes = ClassMap::default();
        let scan = small_scan(seed);
        let a = foreground_of(&scan, &classes);
        let b = foreground_of(&scan.transformed(&p), &classes);
        prop_assert!(a.iter().sum::<f64>() > 0.0);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn descriptor_ignores_point_order(seed in 0u64..1000) {
        let classes = ClassMap::default();
        let scan = small_scan(seed);
        let mut order: Vec<usize> = (0..scan.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled = SemanticScan::new(
            0,
            order.iter().map(|&i| scan.points[i]).collect(),
            order.iter().map(|&i| scan.labels[i]).collect(),
        );
        let bev = BevConfig::default();
        let fa = fuse(&foreground_of(&scan, &classes), &background_descriptor(&scan, &classes, &bev).ring_key());
        let fb = fuse(&foreground_of(&shuffled, &classes), &background_descriptor(&shuffled, &classes, &bev).ring_key());
        for (x, y) in fa.values.iter().zip(&fb.values) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn sector_yaw_shifts_grid_and_keeps_ring_key(seed in 0u64..1000, k in 0usize..60) {
        let classes = ClassMap::default();
        let bev = BevConfig::default();
        let scan = small_scan(seed);
        let base = background_descriptor(&scan, &classes, &bev);
        let turned = background_descriptor(&yaw_scan(&scan, k as f64 * TAU / bev.sectors as f64), &classes, &bev);
        prop_assert_eq!(base.ring_key(), turned.ring_key());
        prop_assert_eq!(base.shifted(k), turned);
    }

    #[test]
    fn translation_along_z_keeps_scan_descriptor(seed in 0u64..1000, dz in -5.0f64..5.0) {
        let classes = ClassMap::default();
        let bev = BevConfig::default();
        let scan = small_scan(seed);
        let lifted = scan.transformed(&Pose::from_translation(Vector3::new(0.0, 0.0, dz)));
        prop_assert_eq!(
            background_descriptor(&scan, &classes, &bev),
            background_descriptor(&lifted, &classes, &bev)
        );
    }
}
