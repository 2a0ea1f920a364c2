#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Acceptance suite: one PASS/FAIL line per criterion. Runs as a plain
//! binary (no libtest harness) so the lines are always printed.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use loopgraph::descriptor::{background_descriptor, foreground_descriptor};
use loopgraph::features::ScanFeatures;
use loopgraph::graph::{GraphConfig, Spectrum};
use loopgraph::metrics::{
    extended_precision, f1_max, median, percentile, pr_sweep, registration_recall, PoseError,
};
use loopgraph::pipeline::{bench, register_pair, BenchOptions, BenchResult};
use loopgraph::pose::{fit_rigid, Point3};
use loopgraph::refinement::icp::{icp_instances, InstancePair};
use loopgraph::refinement::plane::{
    apply_increment, plane_correspondences, point_to_plane_gradient, point_to_plane_objective,
};
use loopgraph::refinement::{estimate_normals, PlaneCloud, RefinementConfig};
use loopgraph::retrieval::{KeyframeEntry, KeyframeIndex};
use loopgraph::scan_io::ClassMap;
use loopgraph::spatial::PointIndex;
use loopgraph::synthetic::{random_pair, SceneSpec};
use loopgraph::verification::{hungarian, ransac_svd, verify, MatchSet};
use loopgraph::{PipelineConfig, Pose};
use nalgebra::{DMatrix, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn oracle_equivalences() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for k in 0..200 {
        let cost = DMatrix::from_fn(8, 8, |_, _| rng.random_range(0.0..100.0));
        let got = row_ordered_cost(&cost, &hungarian::assign(&cost));
        let want = brute_force_assignment(&cost);
        check!(
            got == want,
            "matrix {k}: assignment {got} vs brute force {want}"
        );
    }
    let classes = ClassMap::default();
    let mut worst = 0.0f64;
    for k in 0..50 {
        let n = rng.random_range(1..=200);
        let g = random_graph(&mut rng, n, 80.0, &classes, 60.0);
        let s = Spectrum::of(&g.adjacency).map_err(|e| e.to_string())?;
        let err = (s.reconstruct() - &g.adjacency).abs().max();
        worst = worst.max(err);
        check!(
            err < 1e-8,
            "graph {k} (N={n}): reconstruction error {err:e}"
        );
    }
    let dim = 204;
    let mut index = KeyframeIndex::new(dim);
    let mut entries = Vec::new();
    for id in 0..1000 {
        let d: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
        index
            .insert(KeyframeEntry {
                scan_id: id,
                descriptor: d.clone(),
                pose: None,
            })
            .map_err(|e| e.to_string())?;
        entries.push((id, d));
    }
    for k in 0..100 {
        let q: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
        let got: Vec<usize> = index
            .query(&q, 1000, 25, 0)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|n| n.scan_id)
            .collect();
        let want: Vec<usize> = linear_scan(&entries, &q, 1000, 25, 0)
            .iter()
            .map(|w| w.0)
            .collect();
        check!(got == want, "query {k}: ranking differs from linear scan");
    }
    let secs = start.elapsed().as_secs_f64();
    check!(secs < 10.0, "took {secs:.1} s");
    Ok(format!(
        "200 assignments exact, eigen error ≤ {worst:.1e}, 100 rankings identical, {secs:.2} s"
    ))
}

fn procrustes_and_ransac() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let gt = random_pose(&mut rng);
        let src = random_points(&mut rng, 3, 10.0);
        let dst: Vec<Point3> = src.iter().map(|p| gt.transform_point(p)).collect();
        let fit = fit_rigid(&src, &dst).ok_or("degenerate fit")?;
        let (rot, trans) = fit.difference(&gt);
        worst = worst.max(rot).max(trans);
    }
    check!(worst < 1e-9, "3-point error {worst:e}");
    let mut ok = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = random_pose(&mut rng);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let target = random_points(&mut rng, 30, 25.0);
        let query: Vec<Point3> = target
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if i < 20 {
                    gt.transform_point(t) + Vector3::from_fn(|_, _| noise.sample(&mut rng))
                } else {
                    random_points(&mut rng, 1, 40.0)[0]
                }
            })
            .collect();
        let matches = MatchSet {
            pairs: (0..30).map(|i| (i, i)).collect(),
        };
        let out = ransac_svd(&matches, &query, &target, 1000, 0.5, &mut rng)
            .map_err(|e| e.to_string())?;
        let (rot, trans) = out.pose.difference(&gt);
        if trans < 0.1 && rot.to_degrees() < 0.5 {
            ok += 1;
        }
    }
    check!(ok >= 99, "RANSAC succeeded on {ok}/100 seeds");
    Ok(format!("3-point error {worst:.1e}, RANSAC {ok}/100"))
}

fn end_to_end(result: &BenchResult, secs: f64) -> Outcome {
    let trials = &result.trials;
    let reversed = trials
        .iter()
        .filter(|t| t.ground_truth.yaw().abs().to_degrees() > 150.0)
        .count();
    let s = &result.summary;
    let rr = s.get("registration_recall").unwrap_or(0.0);
    let rte = s.get("rte_median").unwrap_or(f64::NAN);
    let rye = s.get("rye_median_deg").unwrap_or(f64::NAN);
    let msg = format!(
        "{} pairs ({reversed} with yaw > 150°): RR {rr:.0}%, median RTE {rte:.4} m, median RYE {rye:.4}°, {secs:.1} s",
        trials.len()
    );
    check!(trials.len() == 100 && reversed >= 30, "{msg}");
    check!(rr >= 95.0 && rte < 0.10 && rye < 0.5, "{msg}");
    check!(secs < 60.0, "{msg}");
    Ok(msg)
}

fn negative_control() -> Outcome {
    let classes = ClassMap::default();
    let cfg = PipelineConfig::default();
    let spec = SceneSpec::default();
    let mut accepted = 0;
    for i in 0..100u64 {
        let a = random_pair(&spec, 10_000 + 2 * i, 3.0, None, 80.0).scan_a;
        let b = random_pair(&spec, 10_001 + 2 * i, 3.0, None, 80.0).scan_b;
        let r = register_pair(a, b, &classes, &cfg).map_err(|e| e.to_string())?;
        if r.verification.accepted {
            accepted += 1;
        }
    }
    check!(accepted == 0, "{accepted}/100 disjoint pairs accepted");
    Ok("0/100 disjoint pairs accepted".into())
}

fn invariance() -> Outcome {
    let classes = ClassMap::default();
    let cfg = PipelineConfig::default();
    let gcfg = GraphConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let (mut simple, mut worst) = (0, 0.0f64);
    for seed in 0..20 {
        let scan = small_scan(500 + seed);
        let a = ScanFeatures::extract(scan.clone(), &classes, &cfg).map_err(|e| e.to_string())?;
        let pose = random_pose(&mut rng);
        let b = ScanFeatures::extract(scan.transformed(&pose), &classes, &cfg)
            .map_err(|e| e.to_string())?;
        check!(
            a.graph.node_count() == b.graph.node_count(),
            "scan {seed}: node count changed"
        );
        let fa = foreground_descriptor(&a.graph, &gcfg, &classes);
        let fb = foreground_descriptor(&b.graph, &gcfg, &classes);
        for (x, y) in fa.iter().zip(&fb) {
            worst = worst.max((x - y).abs());
        }
        if a.graph.spectrum().map_err(|e| e.to_string())?.is_simple() {
            simple += 1;
        }
        // node order is preserved, so the check applies to every spectrum
        for (na, nb) in a.graph.nodes.iter().zip(&b.graph.nodes) {
            for (x, y) in na.descriptor.iter().zip(&nb.descriptor) {
                worst = worst.max((x - y).abs());
            }
        }
        let bev = background_descriptor(&scan, &classes, &cfg.bev);
        for k in 0..cfg.bev.sectors {
            check!(
                bev.shifted(k).ring_key() == bev.ring_key(),
                "scan {seed}: ring key changed by shift {k}"
            );
        }
        let v = verify(&a, &a.clone(), &classes, &cfg.bev, &cfg.verification);
        let (rot, trans) = v.coarse.difference(&Pose::identity());
        check!(
            v.accepted && rot < 1e-9 && trans < 1e-9,
            "scan {seed}: verify(A, A) gave {:?}",
            v.reason
        );
    }
    // node descriptors on sparser random graphs
    for _ in 0..200 {
        let n = rng.random_range(2..60);
        let mut g = random_graph(&mut rng, n, 150.0, &classes, gcfg.d_max);
        if g.spectrum().map_err(|e| e.to_string())?.is_simple() {
            simple += 1;
        }
        let pose = random_pose(&mut rng);
        let mut h = g.transformed(&pose);
        h = loopgraph::graph::SemanticGraph::from_nodes(h.nodes, &classes, gcfg.d_max);
        g.compute_descriptors(&gcfg, &classes)
            .map_err(|e| e.to_string())?;
        h.compute_descriptors(&gcfg, &classes)
            .map_err(|e| e.to_string())?;
        for (na, nb) in g.nodes.iter().zip(&h.nodes) {
            for (x, y) in na.descriptor.iter().zip(&nb.descriptor) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    check!(worst < 1e-8, "descriptor change {worst:e}");
    Ok(format!("descriptor change ≤ {worst:.1e} over 20 scans and 200 graphs ({simple} with simple spectra), ring key shift-invariant, verify(A, A) identity"))
}

fn numerical_checks() -> Outcome {
    let cfg = RefinementConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    // room corner: three orthogonal 10 m planes sampled every 0.25 m
    let mut pts = Vec::new();
    let axes = [
        Vector3::x() * 10.0,
        Vector3::y() * 10.0,
        Vector3::z() * 10.0,
    ];
    for (u, v) in [(0, 1), (0, 2), (1, 2)] {
        for i in 0..40 {
            for j in 0..40 {
                pts.push(axes[u] * (i as f64 / 40.0) + axes[v] * (j as f64 / 40.0));
            }
        }
    }
    let cloud = |points: Vec<Point3>| {
        let normals = estimate_normals(&points, cfg.normal_neighbors, cfg.min_planarity);
        PlaneCloud { points, normals }
    };
    let query = cloud(pts.clone());
    let usable: Vec<usize> = (0..pts.len())
        .filter(|&i| query.normals[i].usable)
        .collect();
    let tree = PointIndex::new(&usable.iter().map(|&i| pts[i]).collect::<Vec<_>>());
    let mut worst_fd = 0.0f64;
    for _ in 0..10 {
        let gt =
            Pose::from_rotation_vector(random_unit(&mut rng) * 0.03, random_unit(&mut rng) * 0.2);
        let target = cloud(
            pts.iter()
                .map(|p| gt.inverse().transform_point(p))
                .collect(),
        );
        let at =
            Pose::from_rotation_vector(random_unit(&mut rng) * 0.01, random_unit(&mut rng) * 0.05);
        let corr = plane_correspondences(&query, &usable, &tree, &target, &at, &cfg);
        let g = point_to_plane_gradient(&at, &corr);
        let h = 1e-6;
        for k in 0..6 {
            let mut d = Vector6::zeros();
            d[k] = h;
            let fd = (point_to_plane_objective(&apply_increment(&at, &d), &corr)
                - point_to_plane_objective(&apply_increment(&at, &(-d)), &corr))
                / (2.0 * h);
            worst_fd = worst_fd.max((fd - g[k]).abs() / g.norm().max(1.0));
        }
    }
    check!(
        worst_fd < 1e-4,
        "finite-difference relative error {worst_fd:e}"
    );

    let mut updates = 0;
    for _ in 0..20 {
        let gt = random_pose(&mut rng);
        let pairs: Vec<InstancePair> = (0..6)
            .map(|_| {
                let base = Vector3::new(
                    rng.random_range(-8.0..8.0),
                    rng.random_range(-8.0..8.0),
                    0.0,
                );
                let t: Vec<Point3> = (0..100)
                    .map(|_| {
                        base + Vector3::new(
                            rng.random_range(-0.5..0.5),
                            rng.random_range(-0.5..0.5),
                            rng.random_range(0.0..3.0),
                        )
                    })
                    .collect();
                let q = t.iter().map(|p| gt.transform_point(p)).collect();
                InstancePair {
                    query: q,
                    target: t,
                }
            })
            .collect();
        let init =
            Pose::from_rotation_vector(random_unit(&mut rng) * 0.05, random_unit(&mut rng) * 0.3)
                .compose(&gt);
        let (_, report) = icp_instances(&pairs, &init, &cfg);
        for (before, after) in &report.objective_trace {
            check!(
                after <= &(before * (1.0 + 1e-12) + 1e-15),
                "ICP objective rose from {before} to {after}"
            );
            updates += 1;
        }
    }

    let classes = ClassMap::default();
    let pcfg = PipelineConfig::default();
    let mut poses = 0;
    for seed in 0..10 {
        let pair = random_pair(&SceneSpec::default(), 900 + seed, 3.0, None, 80.0);
        let r =
            register_pair(pair.scan_a, pair.scan_b, &classes, &pcfg).map_err(|e| e.to_string())?;
        let mut emitted = vec![r.verification.coarse];
        if let Some(reg) = &r.registration {
            emitted.extend([reg.coarse, reg.icp, reg.refined]);
        }
        for p in emitted {
            let ortho = (p.rotation.transpose() * p.rotation - nalgebra::Matrix3::identity())
                .abs()
                .max();
            let det = p.rotation.determinant();
            check!(
                ortho < 1e-9 && (det - 1.0).abs() < 1e-9,
                "rotation error {ortho:e}, det {det}"
            );
            poses += 1;
        }
    }
    Ok(format!("gradient error ≤ {worst_fd:.1e}, {updates} ICP updates non-increasing, {poses} rotations orthonormal"))
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let ds = random_decisions(&mut rng, 1000);
    let sweep = pr_sweep(&ds).map_err(|e| e.to_string())?;
    let oracle = oracle_metrics(&ds);
    check!(sweep.len() == oracle.points.len(), "sweep length differs");
    for (s, (t, p, r)) in sweep.iter().zip(&oracle.points) {
        check!(
            s.threshold == *t && s.precision == *p && s.recall == *r,
            "PR point at {t} differs"
        );
    }
    let (f1, ep) = (f1_max(&sweep), extended_precision(&sweep));
    check!(f1 == oracle.f1_max, "F1max {f1} vs {}", oracle.f1_max);
    check!(ep == oracle.ep, "EP {ep} vs {}", oracle.ep);
    let errors: Vec<PoseError> = (0..1000)
        .map(|_| PoseError {
            translation: rng.random_range(0.0..4.0),
            yaw_deg: rng.random_range(0.0..10.0),
        })
        .collect();
    let rr = registration_recall(&errors);
    check!(
        rr == oracle_recall(&errors),
        "RR {rr} vs {}",
        oracle_recall(&errors)
    );
    Ok(format!(
        "1000 records: F1max {f1:.4}, EP {ep:.4}, RR {rr:.1}% match the oracle"
    ))
}

fn performance(result: &BenchResult) -> Outcome {
    let points: Vec<f64> = result
        .trials
        .iter()
        .map(|t| t.query_points as f64)
        .collect();
    let total: Vec<f64> = result.trials.iter().map(|t| t.timings.total()).collect();
    let p50 = percentile(&total, 0.5);
    let pts = median(&points);
    let msg = format!("p50 {p50:.1} ms per query at a median of {pts:.0} points");
    check!(pts >= 20_000.0, "{msg}");
    check!(p50 < 100.0, "{msg}");
    Ok(msg)
}

fn main() {
    let classes = ClassMap::default();
    let cfg = PipelineConfig::default();
    let start = Instant::now();
    let bench_run = bench(
        &SceneSpec::default(),
        &BenchOptions::default(),
        &classes,
        &cfg,
    );
    let bench_secs = start.elapsed().as_secs_f64();
    let bench_run = bench_run.map_err(|e| e.to_string());

    type Criterion<'a> = (&'a str, Box<dyn Fn() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("oracle equivalences", Box::new(oracle_equivalences)),
        ("procrustes and RANSAC", Box::new(procrustes_and_ransac)),
        (
            "end-to-end synthetic registration",
            Box::new(|| end_to_end(bench_run.as_ref().map_err(Clone::clone)?, bench_secs)),
        ),
        ("negative control", Box::new(negative_control)),
        ("invariance", Box::new(invariance)),
        ("numerical checks", Box::new(numerical_checks)),
        ("metrics correctness", Box::new(metrics_oracle)),
        (
            "performance",
            Box::new(|| performance(bench_run.as_ref().map_err(Clone::clone)?)),
        ),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
