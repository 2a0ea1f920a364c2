//! Randomized labeled scenes with exact ground truth.
//!
//! A scene is a noise-free labeled point set in world coordinates: poles and
//! trunks as vertical cylinders, lamps as a cylinder with a wider cylindrical
//! head, vehicles as box shells, buildings, fences and hedges as vertical
//! rectangles and roads as horizontal strips. Observing the scene from a
//! sensor pose keeps the points within range, expresses them in the sensor
//! frame and adds fresh Gaussian noise. There is no occlusion model.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{Point3, Pose};
use crate::scan_io::{write_labels, write_poses, write_scan_bin, ClassId, ClassMap, SemanticScan};

/// Height of the sensor above the ground plane, meters.
pub const SENSOR_HEIGHT: f64 = 1.7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallSpec {
    pub class: ClassId,
    /// Planar endpoints of the base, world frame.
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundPatch {
    pub class: ClassId,
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub poles: usize,
    pub trunks: usize,
    pub lamps: usize,
    pub vehicles: usize,
    pub buildings: usize,
    pub fences: usize,
    pub hedges: usize,
    pub road_strips: usize,
    /// Explicit extra walls and ground patches.
    pub walls: Vec<WallSpec>,
    pub ground: Vec<GroundPatch>,
    /// Half-size of the scene rectangle along x and y, meters.
    pub half_extent: [f64; 2],
    /// Observation noise σ, meters.
    pub noise: f64,
    /// Surface sampling density of objects and walls, points per m².
    pub object_density: f64,
    pub wall_density: f64,
    pub ground_density: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            poles: 12,
            trunks: 10,
            lamps: 6,
            vehicles: 5,
            buildings: 5,
            fences: 4,
            hedges: 4,
            road_strips: 2,
            walls: Vec::new(),
            ground: Vec::new(),
            half_extent: [50.0, 50.0],
            noise: 0.02,
            object_density: 60.0,
            wall_density: 3.0,
            ground_density: 3.5,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_extent[0] > 0.0 && self.half_extent[1] > 0.0) {
            return Err(Error::Config("scene extent must be positive".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config("noise must be non-negative".into()));
        }
        if !(self.object_density > 0.0 && self.wall_density > 0.0 && self.ground_density > 0.0) {
            return Err(Error::Config("sampling densities must be positive".into()));
        }
        Ok(())
    }

    /// Background only: no foreground objects, no random walls or roads.
    pub fn empty() -> Self {
        Self {
            poles: 0,
            trunks: 0,
            lamps: 0,
            vehicles: 0,
            buildings: 0,
            fences: 0,
            hedges: 0,
            road_strips: 0,
            ..Default::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scene spec serializes")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceTruth {
    pub label: ClassId,
    /// Center of the instance's sampled points, world frame.
    pub center: Point3,
    /// Range of the instance's points in [`Scene::points`].
    pub points: std::ops::Range<usize>,
}

/// Noise-free labeled points in the world frame (ground at z = 0).
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub points: Vec<Point3>,
    pub labels: Vec<ClassId>,
    pub instances: Vec<InstanceTruth>,
}

/// `(area, origin, u, v)` of a parallelogram face in a local frame.
type Face = (f64, [f64; 3], [f64; 3], [f64; 3]);

fn area_count(rng: &mut impl Rng, area: f64, density: f64) -> usize {
    let expected = area * density;
    let base = expected.floor();
    base as usize + usize::from(rng.random::<f64>() < expected - base)
}

struct Sampler<'a, R: Rng> {
    rng: &'a mut R,
    points: Vec<Point3>,
    labels: Vec<ClassId>,
}

impl<R: Rng> Sampler<'_, R> {
    fn push(&mut self, p: Point3, label: ClassId) {
        self.points.push(p);
        self.labels.push(label);
    }

    fn cylinder(
        &mut self,
        base: Point3,
        radius: f64,
        z0: f64,
        height: f64,
        density: f64,
        label: ClassId,
    ) {
        let n = area_count(self.rng, TAU * radius * height, density).max(12);
        for _ in 0..n {
            let a = self.rng.random_range(0.0..TAU);
            let z = self.rng.random_range(z0..z0 + height);
            self.push(
                base + Vector3::new(radius * a.cos(), radius * a.sin(), z),
                label,
            );
        }
    }

    /// Vertical rectangle with base from `a` to `b`.
    fn wall(&mut self, a: [f64; 2], b: [f64; 2], height: f64, density: f64, label: ClassId) {
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let n = area_count(self.rng, len * height, density);
        for _ in 0..n {
            let s = self.rng.random::<f64>();
            let z = self.rng.random_range(0.0..height);
            self.push(
                Vector3::new(a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]), z),
                label,
            );
        }
    }

    /// Horizontal rectangle at z = 0, given by a center, a unit direction,
    /// a length and a width.
    fn strip(
        &mut self,
        center: [f64; 2],
        dir: [f64; 2],
        length: f64,
        width: f64,
        density: f64,
        label: ClassId,
    ) {
        let n = area_count(self.rng, length * width, density);
        let perp = [-dir[1], dir[0]];
        for _ in 0..n {
            let s = self.rng.random_range(-0.5..0.5) * length;
            let w = self.rng.random_range(-0.5..0.5) * width;
            self.push(
                Vector3::new(
                    center[0] + s * dir[0] + w * perp[0],
                    center[1] + s * dir[1] + w * perp[1],
                    0.0,
                ),
                label,
            );
        }
    }

    /// Five faces (no floor) of a box resting on the ground.
    fn box_shell(
        &mut self,
        center: [f64; 2],
        yaw: f64,
        size: [f64; 3],
        density: f64,
        label: ClassId,
    ) {
        let [l, w, h] = size;
        let (c, s) = (yaw.cos(), yaw.sin());
        let faces: [Face; 5] = [
            // (area, origin, u, v) in the box frame
            (
                l * h,
                [-l / 2.0, -w / 2.0, 0.0],
                [l, 0.0, 0.0],
                [0.0, 0.0, h],
            ),
            (
                l * h,
                [-l / 2.0, w / 2.0, 0.0],
                [l, 0.0, 0.0],
                [0.0, 0.0, h],
            ),
            (
                w * h,
                [-l / 2.0, -w / 2.0, 0.0],
                [0.0, w, 0.0],
                [0.0, 0.0, h],
            ),
            (
                w * h,
                [l / 2.0, -w / 2.0, 0.0],
                [0.0, w, 0.0],
                [0.0, 0.0, h],
            ),
            (l * w, [-l / 2.0, -w / 2.0, h], [l, 0.0, 0.0], [0.0, w, 0.0]),
        ];
        for (area, o, u, v) in faces {
            let n = area_count(self.rng, area, density);
            for _ in 0..n {
                let (a, b) = (self.rng.random::<f64>(), self.rng.random::<f64>());
                let x = o[0] + a * u[0] + b * v[0];
                let y = o[1] + a * u[1] + b * v[1];
                let z = o[2] + a * u[2] + b * v[2];
                self.push(
                    Vector3::new(center[0] + c * x - s * y, center[1] + s * x + c * y, z),
                    label,
                );
            }
        }
    }
}

/// Builds the noise-free scene for `spec` (deterministic per seed).
pub fn generate_scene(spec: &SceneSpec) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [hx, hy] = spec.half_extent;

    // foreground placements with a minimum spacing
    let kinds: Vec<ClassId> = std::iter::empty()
        .chain(std::iter::repeat_n(ClassMap::POLE, spec.poles))
        .chain(std::iter::repeat_n(ClassMap::TRUNK, spec.trunks))
        .chain(std::iter::repeat_n(ClassMap::LAMP, spec.lamps))
        .chain(std::iter::repeat_n(ClassMap::VEHICLE, spec.vehicles))
        .collect();
    let mut sites: Vec<[f64; 2]> = Vec::new();
    for &kind in &kinds {
        let spacing = if kind == ClassMap::VEHICLE { 6.0 } else { 3.0 };
        let mut site = [0.0, 0.0];
        for _ in 0..200 {
            site = [rng.random_range(-hx..hx), rng.random_range(-hy..hy)];
            if sites
                .iter()
                .all(|s| (s[0] - site[0]).hypot(s[1] - site[1]) >= spacing)
            {
                break;
            }
        }
        sites.push(site);
    }

    let mut walls = spec.walls.clone();
    let mut ground = Vec::new();
    let mut random_wall = |rng: &mut ChaCha8Rng, class, len: (f64, f64), height: (f64, f64)| {
        let c = [rng.random_range(-hx..hx), rng.random_range(-hy..hy)];
        let a = rng.random_range(0.0..PI);
        let l = rng.random_range(len.0..len.1) / 2.0;
        walls.push(WallSpec {
            class,
            start: [c[0] - l * a.cos(), c[1] - l * a.sin()],
            end: [c[0] + l * a.cos(), c[1] + l * a.sin()],
            height: rng.random_range(height.0..height.1),
        });
    };
    for _ in 0..spec.buildings {
        random_wall(&mut rng, ClassMap::BUILDING, (10.0, 30.0), (6.0, 12.0));
    }
    for _ in 0..spec.fences {
        random_wall(&mut rng, ClassMap::FENCE, (8.0, 20.0), (1.2, 2.0));
    }
    for _ in 0..spec.hedges {
        random_wall(&mut rng, ClassMap::VEGETATION, (5.0, 15.0), (1.0, 2.5));
    }
    let road_len = 2.0 * hx.hypot(hy);
    for _ in 0..spec.road_strips {
        let a = rng.random_range(0.0..PI);
        let c = [
            rng.random_range(-hx..hx) * 0.5,
            rng.random_range(-hy..hy) * 0.5,
        ];
        ground.push((c, [a.cos(), a.sin()], road_len, rng.random_range(6.0..10.0)));
    }

    let mut sampler = Sampler {
        rng: &mut rng,
        points: Vec::new(),
        labels: Vec::new(),
    };
    let mut instances = Vec::new();
    for (&kind, site) in kinds.iter().zip(&sites) {
        let start = sampler.points.len();
        let base = Vector3::new(site[0], site[1], 0.0);
        let d = spec.object_density;
        match kind {
            ClassMap::POLE => sampler.cylinder(base, 0.15, 0.0, 4.0, d, kind),
            ClassMap::TRUNK => sampler.cylinder(base, 0.25, 0.0, 3.0, d, kind),
            ClassMap::LAMP => {
                sampler.cylinder(base, 0.12, 0.0, 5.5, d, kind);
                sampler.cylinder(base, 0.35, 5.5, 0.4, d, kind);
            }
            _ => {
                let yaw = sampler.rng.random_range(0.0..PI);
                sampler.box_shell(*site, yaw, [4.5, 1.8, 1.6], d / 4.0, kind);
            }
        }
        let range = start..sampler.points.len();
        let n = range.len() as f64;
        let center = sampler.points[range.clone()].iter().sum::<Point3>() / n;
        instances.push(InstanceTruth {
            label: kind,
            center,
            points: range,
        });
    }
    for w in &walls {
        sampler.wall(w.start, w.end, w.height, spec.wall_density, w.class);
    }
    for (c, dir, len, width) in ground {
        sampler.strip(c, dir, len, width, spec.ground_density, ClassMap::ROAD);
    }
    for g in &spec.ground {
        let c = [(g.min[0] + g.max[0]) / 2.0, (g.min[1] + g.max[1]) / 2.0];
        sampler.strip(
            c,
            [1.0, 0.0],
            g.max[0] - g.min[0],
            g.max[1] - g.min[1],
            spec.ground_density,
            g.class,
        );
    }
    Scene {
        points: sampler.points,
        labels: sampler.labels,
        instances,
    }
}

/// Sensor pose in the world frame at planar position `(x, y)` and heading
/// `yaw`, mounted [`SENSOR_HEIGHT`] above the ground.
pub fn sensor_pose(x: f64, y: f64, yaw: f64) -> Pose {
    Pose::from_yaw(yaw, Vector3::new(x, y, SENSOR_HEIGHT))
}

/// Scene points within planar `max_range` of `pose`, in the sensor frame,
/// with fresh isotropic Gaussian noise.
pub fn observe(
    scene: &Scene,
    pose: &Pose,
    max_range: f64,
    noise: f64,
    seed: u64,
    scan_id: usize,
) -> SemanticScan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = (noise > 0.0).then(|| Normal::new(0.0, noise).expect("valid σ"));
    let inv = pose.inverse();
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (p, &l) in scene.points.iter().zip(&scene.labels) {
        let d = p - pose.translation;
        if d.x.hypot(d.y) >= max_range {
            continue;
        }
        let mut local = inv.transform_point(p);
        if let Some(n) = &normal {
            local += Vector3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
        }
        points.push(local);
        labels.push(l);
    }
    SemanticScan::new(scan_id, points, labels)
}

#[derive(Clone, Debug)]
pub struct ScenePair {
    pub scan_a: SemanticScan,
    pub scan_b: SemanticScan,
    /// Maps scan_b's frame into scan_a's frame: `pose_a⁻¹ ∘ pose_b`.
    pub ground_truth: Pose,
    pub pose_a: Pose,
    pub pose_b: Pose,
}

pub fn observe_pair(
    scene: &Scene,
    pose_a: &Pose,
    pose_b: &Pose,
    max_range: f64,
    noise: f64,
    seed: u64,
) -> ScenePair {
    ScenePair {
        scan_a: observe(scene, pose_a, max_range, noise, seed.wrapping_mul(2), 0),
        scan_b: observe(scene, pose_b, max_range, noise, seed.wrapping_mul(2) + 1, 1),
        ground_truth: pose_a.inverse().compose(pose_b),
        pose_a: *pose_a,
        pose_b: *pose_b,
    }
}

/// Pair for benchmark trial `seed`: scene from `spec` reseeded, first pose
/// near the center, second pose offset by at most `max_offset` with the
/// given relative yaw (uniform when `None`).
pub fn random_pair(
    spec: &SceneSpec,
    seed: u64,
    max_offset: f64,
    yaw: Option<f64>,
    max_range: f64,
) -> ScenePair {
    let scene = generate_scene(&spec.clone().with_seed(seed));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let pose_a = sensor_pose(
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-PI..PI),
    );
    let r = max_offset * rng.random::<f64>().sqrt();
    let a = rng.random_range(0.0..TAU);
    let rel_yaw = yaw.unwrap_or_else(|| rng.random_range(-PI..PI));
    let pose_b = sensor_pose(
        pose_a.translation.x + r * a.cos(),
        pose_a.translation.y + r * a.sin(),
        pose_a.yaw() + rel_yaw,
    );
    observe_pair(&scene, &pose_a, &pose_b, max_range, spec.noise, seed)
}

/// Closed square loop of side `side` centered on the origin, starting and
/// ending at the corner `(-side/2, -side/2)`, with a scan every `step`
/// meters and the heading along the path.
pub fn square_trajectory(side: f64, step: f64) -> Vec<Pose> {
    let per_side = (side / step).round().max(1.0) as usize;
    let h = side / 2.0;
    let corners = [(-h, -h), (h, -h), (h, h), (-h, h)];
    let mut poses = Vec::new();
    for k in 0..4 {
        let (x0, y0) = corners[k];
        let (x1, y1) = corners[(k + 1) % 4];
        let yaw = (y1 - y0).atan2(x1 - x0);
        for i in 0..per_side {
            let s = i as f64 / per_side as f64;
            poses.push(sensor_pose(x0 + s * (x1 - x0), y0 + s * (y1 - y0), yaw));
        }
    }
    poses.push(sensor_pose(-h, -h, 0.0));
    poses
}

/// Straight path along +x centered on the origin, a scan every `step` meters.
pub fn straight_trajectory(length: f64, step: f64) -> Vec<Pose> {
    let n = (length / step).floor() as usize + 1;
    (0..n)
        .map(|i| sensor_pose(i as f64 * step - length / 2.0, 0.0, 0.0))
        .collect()
}

/// Observes `scene` from every pose; scan ids follow trajectory order.
pub fn observe_sequence(
    scene: &Scene,
    poses: &[Pose],
    max_range: f64,
    noise: f64,
    seed: u64,
) -> Vec<SemanticScan> {
    poses
        .iter()
        .enumerate()
        .map(|(i, p)| {
            observe(
                scene,
                p,
                max_range,
                noise,
                seed.wrapping_add(i as u64 * 7919),
                i,
            )
        })
        .collect()
}

/// Writes a sequence in the KITTI layout: `velodyne/NNNNNN.bin`,
/// `labels/NNNNNN.label` and `poses.txt` under `dir`. Coordinates are
/// stored as f32.
pub fn export_sequence(dir: &Path, scans: &[SemanticScan], poses: &[Pose]) -> Result<()> {
    let velodyne = dir.join("velodyne");
    let labels = dir.join("labels");
    for d in [&velodyne, &labels] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for scan in scans {
        let stem = format!("{:06}", scan.scan_id);
        write_scan_bin(velodyne.join(format!("{stem}.bin")), &scan.points)?;
        write_labels(labels.join(format!("{stem}.label")), &scan.labels)?;
    }
    write_poses(dir.join("poses.txt"), poses)
}
