//! RRT-Connect for a free-flying gripper box among axis-aligned obstacles.

use nalgebra::{Matrix3, UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{Action, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("invalid world: {0}")]
    InvalidWorld(&'static str),
    #[error("invalid planner configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("start pose is in collision")]
    StartInCollision,
    #[error("goal pose is in collision")]
    GoalInCollision,
    #[error("no path found within {0} iterations")]
    PlanningTimeout(usize),
}

/// Axis-aligned box given by its min and max corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn from_center(center: Vector3<f64>, half: Vector3<f64>) -> Self {
        Self { min: center - half, max: center + half }
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) / 2.0
    }

    pub fn half_extents(&self) -> Vector3<f64> {
        (self.max - self.min) / 2.0
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|a| self.min[a] <= other.max[a] && other.min[a] <= self.max[a])
    }

    fn is_valid(&self) -> bool {
        (0..3).all(|a| self.min[a].is_finite() && self.max[a].is_finite() && self.min[a] <= self.max[a])
    }
}

/// Oriented box vs axis-aligned box overlap by the separating-axis theorem.
/// Touching boxes count as overlapping.
pub fn obb_overlaps_aabb(center: &Vector3<f64>, axes: &Matrix3<f64>, half: &Vector3<f64>, aabb: &Aabb) -> bool {
    let t = center - aabb.center();
    let h = aabb.half_extents();
    let world = Matrix3::identity();
    let mut candidates: Vec<Vector3<f64>> = Vec::with_capacity(15);
    for i in 0..3 {
        candidates.push(world.column(i).into_owned());
        candidates.push(axes.column(i).into_owned());
    }
    for i in 0..3 {
        for j in 0..3 {
            candidates.push(world.column(i).cross(&axes.column(j)));
        }
    }
    for l in candidates {
        if l.norm_squared() < 1e-18 {
            continue;
        }
        let r_obb: f64 = (0..3).map(|i| half[i] * axes.column(i).dot(&l).abs()).sum();
        let r_aabb: f64 = (0..3).map(|i| h[i] * l[i].abs()).sum();
        if t.dot(&l).abs() > r_obb + r_aabb {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub obstacles: Vec<Aabb>,
    pub workspace: Aabb,
    pub gripper_halfextents: Vector3<f64>,
}

impl WorldModel {
    pub fn new(obstacles: Vec<Aabb>, workspace: Aabb, gripper_halfextents: Vector3<f64>) -> Result<Self, PlanError> {
        if !workspace.is_valid() {
            return Err(PlanError::InvalidWorld("workspace box is malformed"));
        }
        if gripper_halfextents.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(PlanError::InvalidWorld("gripper half extents must be positive"));
        }
        if obstacles.iter().any(|o| !o.is_valid() || !o.intersects(&workspace)) {
            return Err(PlanError::InvalidWorld("obstacle is malformed or outside the workspace"));
        }
        Ok(Self { obstacles, workspace, gripper_halfextents })
    }

    fn gripper_corners(&self, pose: &Pose, half: &Vector3<f64>) -> impl Iterator<Item = Vector3<f64>> {
        let h = *half;
        let pose = *pose;
        (0..8).map(move |k| {
            let local = Vector3::new(
                if k & 1 == 0 { -h.x } else { h.x },
                if k & 2 == 0 { -h.y } else { h.y },
                if k & 4 == 0 { -h.z } else { h.z },
            );
            pose.transform_point(&local)
        })
    }
}

/// Whether the gripper box at `pose` hits an obstacle or leaves the workspace.
pub fn collides(world: &WorldModel, pose: &Pose, allow_collision: bool) -> bool {
    !allow_collision && collides_inflated(world, pose, 0.0)
}

/// Collision test for the gripper box grown by `margin` along each of its axes.
fn collides_inflated(world: &WorldModel, pose: &Pose, margin: f64) -> bool {
    let half = world.gripper_halfextents.add_scalar(margin);
    if world.gripper_corners(pose, &half).any(|c| !world.workspace.contains(&c)) {
        return true;
    }
    world.obstacles.iter().any(|o| obb_overlaps_aabb(pose.translation(), pose.rotation(), &half, o))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    /// Largest translation per tree extension, meters.
    pub step_size: f64,
    pub max_iterations: usize,
    pub goal_bias: f64,
    pub rng_seed: u64,
    /// Largest rotation per tree extension, radians.
    pub angular_step: f64,
    /// Meters per radian in the pose distance.
    pub rotation_weight: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            step_size: 0.05,
            max_iterations: 20_000,
            goal_bias: 0.1,
            rng_seed: 0,
            angular_step: 0.25,
            rotation_weight: 0.1,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(PlanError::InvalidConfig("step_size must be positive"));
        }
        if !(self.angular_step > 0.0 && self.angular_step.is_finite()) {
            return Err(PlanError::InvalidConfig("angular_step must be positive"));
        }
        if !(self.goal_bias > 0.0 && self.goal_bias < 1.0) {
            return Err(PlanError::InvalidConfig("goal_bias must lie in (0, 1)"));
        }
        if !(self.rotation_weight >= 0.0 && self.rotation_weight.is_finite()) {
            return Err(PlanError::InvalidConfig("rotation_weight must be nonnegative"));
        }
        if self.max_iterations == 0 {
            return Err(PlanError::InvalidConfig("max_iterations must be positive"));
        }
        Ok(())
    }

    /// Translation distance plus `rotation_weight` times the geodesic angle.
    pub fn distance(&self, a: &Pose, b: &Pose) -> f64 {
        a.translation_distance(b) + self.rotation_weight * a.angle_to(b)
    }
}

/// Whether the straight interpolation between `a` and `b` stays free.
///
/// The edge is cut every `step_size / 4` of translation and `angular_step / 4`
/// of rotation. Endpoints are tested as they are; each piece in between is
/// tested at its midpoint with the gripper grown by the farthest any gripper
/// point can travel within half a piece, so every intermediate pose is covered.
pub fn edge_is_free(world: &WorldModel, a: &Pose, b: &Pose, cfg: &PlanConfig) -> bool {
    let dist = a.translation_distance(b);
    let angle = a.angle_to(b);
    let n = (dist / (cfg.step_size / 4.0)).max(angle / (cfg.angular_step / 4.0)).ceil().max(1.0) as usize;
    let radius = world.gripper_halfextents.norm();
    let margin = 0.5 * (dist + angle * radius) / n as f64;
    !collides(world, a, false)
        && !collides(world, b, false)
        && (0..n).all(|k| !collides_inflated(world, &a.interpolate(b, (k as f64 + 0.5) / n as f64), margin))
}

/// Edge check at an explicit resolution.
pub fn edge_is_free_at(world: &WorldModel, a: &Pose, b: &Pose, trans_res: f64, ang_res: f64) -> bool {
    let n = (a.translation_distance(b) / trans_res).max(a.angle_to(b) / ang_res).ceil().max(1.0) as usize;
    (0..=n).all(|k| !collides(world, &a.interpolate(b, k as f64 / n as f64), false))
}

struct Tree {
    nodes: Vec<Pose>,
    parents: Vec<usize>,
}

impl Tree {
    fn new(root: Pose) -> Self {
        Self { nodes: vec![root], parents: vec![usize::MAX] }
    }

    fn nearest(&self, q: &Pose, cfg: &PlanConfig) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = cfg.distance(n, q);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    fn push(&mut self, pose: Pose, parent: usize) -> usize {
        self.nodes.push(pose);
        self.parents.push(parent);
        self.nodes.len() - 1
    }

    fn path_to_root(&self, mut i: usize) -> Vec<Pose> {
        let mut out = Vec::new();
        while i != usize::MAX {
            out.push(self.nodes[i]);
            i = self.parents[i];
        }
        out
    }
}

enum Extend {
    Reached(usize),
    Advanced(usize),
    Trapped,
}

fn steer(from: &Pose, to: &Pose, cfg: &PlanConfig) -> (Pose, bool) {
    let dt = from.translation_distance(to);
    let da = from.angle_to(to);
    let s = 1.0f64.min(cfg.step_size / dt.max(1e-300)).min(cfg.angular_step / da.max(1e-300));
    if s >= 1.0 {
        (*to, true)
    } else {
        (from.interpolate(to, s), false)
    }
}

fn extend(world: &WorldModel, tree: &mut Tree, target: &Pose, cfg: &PlanConfig) -> Extend {
    let near = tree.nearest(target, cfg);
    let from = tree.nodes[near];
    let (new, reached) = steer(&from, target, cfg);
    if !edge_is_free(world, &from, &new, cfg) {
        return Extend::Trapped;
    }
    let id = tree.push(new, near);
    if reached {
        Extend::Reached(id)
    } else {
        Extend::Advanced(id)
    }
}

fn connect(world: &WorldModel, tree: &mut Tree, target: &Pose, cfg: &PlanConfig) -> Option<usize> {
    loop {
        match extend(world, tree, target, cfg) {
            Extend::Reached(id) => return Some(id),
            Extend::Advanced(_) => continue,
            Extend::Trapped => return None,
        }
    }
}

fn random_pose(rng: &mut ChaCha8Rng, workspace: &Aabb) -> Pose {
    let t = Vector3::from_fn(|a, _| rng.gen_range(workspace.min[a]..=workspace.max[a]));
    // uniform rotation from a normalized Gaussian 4-vector
    let mut q = Vector4::zeros();
    while q.norm_squared() < 1e-12 {
        q = Vector4::from_fn(|_, _| {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        });
    }
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    Pose::from_quaternion(q, t)
}

fn shortcut(world: &WorldModel, mut path: Vec<Pose>, attempts: usize, rng: &mut ChaCha8Rng, cfg: &PlanConfig) -> Vec<Pose> {
    for _ in 0..attempts {
        if path.len() <= 2 {
            break;
        }
        let i = rng.gen_range(0..path.len() - 2);
        let j = rng.gen_range(i + 2..path.len());
        if edge_is_free(world, &path[i], &path[j], cfg) {
            path.drain(i + 1..j);
        }
    }
    path
}

/// Collision-free waypoints from `start` to `goal`.
///
/// With `allow_collision` set, checking is skipped and the path is the direct
/// segment. Results depend only on the inputs and `cfg.rng_seed`.
pub fn plan_rrt_connect(
    world: &WorldModel,
    start: &Pose,
    goal: &Pose,
    cfg: &PlanConfig,
    allow_collision: bool,
) -> Result<Vec<Pose>, PlanError> {
    cfg.validate()?;
    if allow_collision {
        return Ok(vec![*start, *goal]);
    }
    if collides(world, start, false) {
        return Err(PlanError::StartInCollision);
    }
    if collides(world, goal, false) {
        return Err(PlanError::GoalInCollision);
    }
    if edge_is_free(world, start, goal, cfg) {
        return Ok(vec![*start, *goal]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut a = Tree::new(*start);
    let mut b = Tree::new(*goal);
    let mut a_is_start = true;
    for _ in 0..cfg.max_iterations {
        let target = if rng.gen::<f64>() < cfg.goal_bias {
            b.nodes[0]
        } else {
            random_pose(&mut rng, &world.workspace)
        };
        let new_id = match extend(world, &mut a, &target, cfg) {
            Extend::Reached(id) | Extend::Advanced(id) => Some(id),
            Extend::Trapped => None,
        };
        if let Some(id) = new_id {
            let q_new = a.nodes[id];
            if let Some(other) = connect(world, &mut b, &q_new, cfg) {
                let mut from_a = a.path_to_root(id);
                from_a.reverse();
                let from_b = b.path_to_root(other);
                // q_new appears at the end of from_a and the start of from_b
                from_a.extend(from_b.into_iter().skip(1));
                if !a_is_start {
                    from_a.reverse();
                }
                let path = shortcut(world, from_a, cfg.max_iterations / 10, &mut rng, cfg);
                return Ok(path);
            }
        }
        std::mem::swap(&mut a, &mut b);
        a_is_start = !a_is_start;
    }
    Err(PlanError::PlanningTimeout(cfg.max_iterations))
}

/// Path as actions sharing the commanding action's flags.
pub fn path_to_actions(path: &[Pose], gripper_open: bool, allow_collision: bool) -> Vec<Action> {
    path.iter().map(|p| Action::new(*p, gripper_open, allow_collision)).collect()
}

/// JSON list of 18-scalar action vectors.
pub fn path_to_json(path: &[Pose], gripper_open: bool, allow_collision: bool) -> String {
    let rows: Vec<Vec<f64>> = path_to_actions(path, gripper_open, allow_collision)
        .iter()
        .map(|a| a.to_vector().to_vec())
        .collect();
    serde_json::to_string(&rows).expect("finite actions serialize")
}
