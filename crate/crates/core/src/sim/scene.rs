use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::task::{ObjectKind, TaskSpec, WORKSPACE_MAX, WORKSPACE_MIN};
use crate::cloud::LabeledCloud;
use crate::planner::{Aabb, WorldModel};
use crate::se3::Pose;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Surface sampling density, points per square meter.
    pub point_density: f64,
    /// Standard deviation of Gaussian point noise, meters.
    pub noise_sigma: f64,
    /// Transit height of the gripper.
    pub z_safe: f64,
    pub gripper_half_extents: [f64; 3],
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { point_density: 500.0, noise_sigma: 0.0, z_safe: 0.35, gripper_half_extents: [0.01, 0.03, 0.01] }
    }
}

/// Minimum samples along each edge of a face.
const MIN_PER_EDGE: usize = 3;

/// Cell-centered grid on the `[-a, a] x [-b, b]` rectangle.
fn face_grid(a: f64, b: f64, spacing: f64) -> Vec<(f64, f64)> {
    let nu = ((2.0 * a / spacing).ceil() as usize).max(MIN_PER_EDGE);
    let nv = ((2.0 * b / spacing).ceil() as usize).max(MIN_PER_EDGE);
    let mut out = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let u = -a + 2.0 * a * (i as f64 + 0.5) / nu as f64;
            let v = -b + 2.0 * b * (j as f64 + 0.5) / nv as f64;
            out.push((u, v));
        }
    }
    out
}

/// Surface samples of a box in its own frame.
fn box_surface(h: &Vector3<f64>, spacing: f64, top_only: bool) -> Vec<Vector3<f64>> {
    let mut pts = Vec::new();
    for (u, v) in face_grid(h.x, h.y, spacing) {
        pts.push(Vector3::new(u, v, h.z));
    }
    if top_only {
        return pts;
    }
    for (u, v) in face_grid(h.x, h.y, spacing) {
        pts.push(Vector3::new(u, v, -h.z));
    }
    for (u, v) in face_grid(h.y, h.z, spacing) {
        pts.push(Vector3::new(h.x, u, v));
        pts.push(Vector3::new(-h.x, u, v));
    }
    for (u, v) in face_grid(h.x, h.z, spacing) {
        pts.push(Vector3::new(u, h.y, v));
        pts.push(Vector3::new(u, -h.y, v));
    }
    pts
}

/// Fixed object-frame samples for every object of a task, so clouds taken
/// at different poses correspond point by point.
#[derive(Debug, Clone)]
pub struct SceneSampler {
    local: Vec<Vec<Vector3<f64>>>,
    ranges: Vec<std::ops::Range<usize>>,
    instance_ids: Vec<u32>,
    class_ids: Vec<u32>,
    cfg: SceneConfig,
}

impl SceneSampler {
    pub fn new(task: &TaskSpec, cfg: &SceneConfig) -> Self {
        let spacing = 1.0 / cfg.point_density.max(1e-9).sqrt();
        let mut local = Vec::new();
        let mut ranges = Vec::new();
        let mut instance_ids = Vec::new();
        let mut class_ids = Vec::new();
        for o in &task.objects {
            let pts = box_surface(&o.shape.half_extents, spacing, o.kind == ObjectKind::Table);
            let start = instance_ids.len();
            instance_ids.extend(std::iter::repeat_n(o.instance_id, pts.len()));
            class_ids.extend(std::iter::repeat_n(o.class_id, pts.len()));
            ranges.push(start..instance_ids.len());
            local.push(pts);
        }
        Self { local, ranges, instance_ids, class_ids, cfg: cfg.clone() }
    }

    pub fn config(&self) -> &SceneConfig {
        &self.cfg
    }

    /// Cloud index range of object `k`.
    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.ranges[k].clone()
    }

    pub fn point_count(&self) -> usize {
        self.instance_ids.len()
    }

    /// Noise-free cloud of the scene with objects at `poses`.
    pub fn cloud(&self, poses: &[Pose]) -> LabeledCloud {
        let mut pts = Vec::with_capacity(self.point_count());
        for (local, pose) in self.local.iter().zip(poses) {
            pts.extend(local.iter().map(|p| pose.transform_point(p)));
        }
        LabeledCloud::new(pts, self.instance_ids.clone(), self.class_ids.clone()).expect("labels are consistent")
    }

    /// Cloud with the configured Gaussian noise added.
    pub fn observe(&self, poses: &[Pose], rng: &mut impl Rng) -> LabeledCloud {
        let cloud = self.cloud(poses);
        if self.cfg.noise_sigma <= 0.0 {
            return cloud;
        }
        let sigma = self.cfg.noise_sigma;
        let pts = cloud
            .points()
            .iter()
            .map(|p| p + Vector3::from_fn(|_, _| sigma * gaussian(rng)))
            .collect();
        LabeledCloud::new(pts, self.instance_ids.clone(), self.class_ids.clone()).expect("labels are consistent")
    }

    /// Planner world: every movable object except `skip` as its bounding box.
    pub fn world(&self, task: &TaskSpec, poses: &[Pose], skip: Option<usize>) -> WorldModel {
        let obstacles = task
            .objects
            .iter()
            .zip(poses)
            .enumerate()
            .filter(|(k, (o, _))| o.kind != ObjectKind::Table && Some(*k) != skip)
            .map(|(_, (o, pose))| {
                let h = o.shape.half_extents;
                let r = pose.rotation().abs();
                let half = r * h;
                Aabb::from_center(*pose.translation(), half)
            })
            .collect();
        let workspace = Aabb::new(Vector3::from(WORKSPACE_MIN), Vector3::from(WORKSPACE_MAX));
        WorldModel::new(obstacles, workspace, Vector3::from(self.cfg.gripper_half_extents)).expect("scene world is valid")
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::task::generate_task;

    #[test]
    fn every_face_has_at_least_nine_points() {
        let pts = box_surface(&Vector3::new(0.01, 0.01, 0.01), 0.045, false);
        assert_eq!(pts.len(), 6 * 9);
        assert!(pts.iter().all(|p| (0..3).any(|a| (p[a].abs() - 0.01).abs() < 1e-15)));
    }

    #[test]
    fn table_density_matches_configuration() {
        let task = generate_task(1, 0).unwrap();
        let s = SceneSampler::new(&task, &SceneConfig::default());
        let table = s.range(0);
        // 1 m^2 at 500 points per m^2, rounded up per edge
        assert_eq!(table.len(), 23 * 23);
        let cloud = s.cloud(&task.initial_poses());
        assert_eq!(cloud.len(), s.point_count());
        assert!(cloud.points()[table].iter().all(|p| p.z == 0.0));
    }

    #[test]
    fn clouds_move_rigidly_with_objects() {
        let task = generate_task(2, 4).unwrap();
        let s = SceneSampler::new(&task, &SceneConfig::default());
        let mut poses = task.initial_poses();
        let a = s.cloud(&poses);
        let g = Pose::from_xyz_yaw(0.05, -0.02, 0.0, 0.3);
        poses[1] = g.compose(&poses[1]);
        let b = s.cloud(&poses);
        for i in s.range(1) {
            assert!((g.transform_point(&a.points()[i]) - b.points()[i]).norm() < 1e-12);
        }
        for i in s.range(2) {
            assert_eq!(a.points()[i], b.points()[i]);
        }
    }

    #[test]
    fn world_excludes_table_and_skipped_object() {
        let task = generate_task(1, 2).unwrap();
        let s = SceneSampler::new(&task, &SceneConfig::default());
        let poses = task.initial_poses();
        let movable = task.objects.len() - 1;
        assert_eq!(s.world(&task, &poses, None).obstacles.len(), movable);
        assert_eq!(s.world(&task, &poses, Some(1)).obstacles.len(), movable - 1);
    }
}
