use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::se3::Pose;

pub const WORKSPACE_MIN: [f64; 3] = [-0.5, -0.5, 0.0];
pub const WORKSPACE_MAX: [f64; 3] = [0.5, 0.5, 0.6];

/// Spawn area half width; keeps footprints inside the workspace.
const SPAWN_HALF: f64 = 0.36;
/// Clearance added around every footprint at spawn.
const SPAWN_MARGIN: f64 = 0.045;
/// Clearance required after a layout perturbation.
const PERTURB_MARGIN: f64 = 0.015;
const MAX_LAYOUT_ATTEMPTS: usize = 200;
const MAX_OBJECT_SAMPLES: usize = 300;
const MAX_YAW: f64 = 0.4;
const DISTRACTOR_PROBABILITY: f64 = 0.5;

pub const DEFAULT_TOLERANCE_M: f64 = 0.02;
pub const DEFAULT_TOLERANCE_RAD: f64 = 0.2;

/// Class ids used by generated scenes.
pub mod class {
    pub const TABLE: u32 = 0;
    /// Blocks take `BLOCK_BASE + k` for k in 0..4.
    pub const BLOCK_BASE: u32 = 1;
    /// Pads take `PAD_BASE + k` for k in 0..4.
    pub const PAD_BASE: u32 = 5;
    pub const DISTRACTOR: u32 = 9;
    pub const COUNT: usize = 10;

    pub fn names() -> Vec<String> {
        let mut names = vec!["table".to_string()];
        names.extend((1..=4).map(|k| format!("block{k}")));
        names.extend((1..=4).map(|k| format!("pad{k}")));
        names.push("distractor".into());
        names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Table,
    Block,
    Pad,
    Distractor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxShape {
    pub half_extents: Vector3<f64>,
}

impl BoxShape {
    pub fn new(hx: f64, hy: f64, hz: f64) -> Self {
        Self { half_extents: Vector3::new(hx, hy, hz) }
    }

    /// Radius of the circle around the footprint.
    fn footprint_radius(&self) -> f64 {
        self.half_extents.x.hypot(self.half_extents.y)
    }

    /// Whether a point given in the box frame lies inside the box.
    pub fn contains_local(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a].abs() <= self.half_extents[a])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub instance_id: u32,
    pub class_id: u32,
    pub kind: ObjectKind,
    pub shape: BoxShape,
    /// Pose of the box center.
    pub pose: Pose,
}

/// Object `instance_id` must rest at `relative_pose` in the frame of `support_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub instance_id: u32,
    pub support_id: u32,
    pub relative_pose: Pose,
    pub tolerance_m: f64,
    pub tolerance_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub level: u8,
    pub n_interactions: usize,
    pub objects: Vec<ObjectSpec>,
    /// In execution order.
    pub goals: Vec<Goal>,
    pub rng_seed: u64,
}

/// Uniform spawn noise bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub translation: f64,
    pub rotation: f64,
}

impl Perturbation {
    pub const NONE: Perturbation = Perturbation { translation: 0.0, rotation: 0.0 };

    pub fn is_zero(&self) -> bool {
        self.translation == 0.0 && self.rotation == 0.0
    }
}

impl TaskSpec {
    pub fn task_id(&self) -> String {
        format!("level{}", self.level)
    }

    pub fn object_index(&self, instance_id: u32) -> Option<usize> {
        self.objects.iter().position(|o| o.instance_id == instance_id)
    }

    pub fn initial_poses(&self) -> Vec<Pose> {
        self.objects.iter().map(|o| o.pose).collect()
    }

    /// Target pose of the goal's object given the current pose of its support.
    pub fn goal_target(&self, goal: &Goal, poses: &[Pose]) -> Pose {
        let support = self.object_index(goal.support_id).expect("goal support exists");
        poses[support].compose(&goal.relative_pose)
    }

    pub fn goal_satisfied(&self, goal: &Goal, poses: &[Pose]) -> bool {
        let obj = self.object_index(goal.instance_id).expect("goal object exists");
        let target = self.goal_target(goal, poses);
        poses[obj].translation_distance(&target) <= goal.tolerance_m && poses[obj].angle_to(&target) <= goal.tolerance_rad
    }

    pub fn all_goals_met(&self, poses: &[Pose]) -> bool {
        self.goals.iter().all(|g| self.goal_satisfied(g, poses))
    }

    pub fn with_tolerance(mut self, meters: f64, radians: f64) -> Self {
        for g in &mut self.goals {
            g.tolerance_m = meters;
            g.tolerance_rad = radians;
        }
        self
    }
}

fn block_shape(k: u32) -> BoxShape {
    BoxShape::new(0.030 + 0.004 * k as f64, 0.018 + 0.002 * k as f64, 0.0275)
}

fn pad_shape() -> BoxShape {
    BoxShape::new(0.07, 0.05, 0.005)
}

fn table_shape() -> BoxShape {
    BoxShape::new(0.5, 0.5, 0.0)
}

fn distractor_shape() -> BoxShape {
    BoxShape::new(0.03, 0.03, 0.045)
}

fn rest_pose(shape: &BoxShape, x: f64, y: f64, yaw: f64) -> Pose {
    Pose::from_xyz_yaw(x, y, shape.half_extents.z, yaw)
}

fn footprints_clear(objects: &[ObjectSpec], margin: f64) -> bool {
    let movable: Vec<&ObjectSpec> = objects.iter().filter(|o| o.kind != ObjectKind::Table).collect();
    for (i, a) in movable.iter().enumerate() {
        let pa = a.pose.translation();
        if pa.x.abs() > SPAWN_HALF + 0.04 || pa.y.abs() > SPAWN_HALF + 0.04 {
            return false;
        }
        for b in &movable[i + 1..] {
            let pb = b.pose.translation();
            let need = a.shape.footprint_radius() + b.shape.footprint_radius() + 2.0 * margin;
            if (pa.xy() - pb.xy()).norm() < need {
                return false;
            }
        }
    }
    true
}

fn try_layout(rng: &mut ChaCha8Rng, shapes: &[(u32, u32, ObjectKind, BoxShape)]) -> Option<Vec<ObjectSpec>> {
    let mut placed: Vec<ObjectSpec> = Vec::with_capacity(shapes.len() + 1);
    placed.push(ObjectSpec {
        instance_id: 0,
        class_id: class::TABLE,
        kind: ObjectKind::Table,
        shape: table_shape(),
        pose: Pose::identity(),
    });
    for &(instance_id, class_id, kind, shape) in shapes {
        let r = shape.footprint_radius() + SPAWN_MARGIN;
        let mut ok = None;
        for _ in 0..MAX_OBJECT_SAMPLES {
            let x = rng.gen_range(-SPAWN_HALF..=SPAWN_HALF);
            let y = rng.gen_range(-SPAWN_HALF..=SPAWN_HALF);
            let clear = placed.iter().filter(|o| o.kind != ObjectKind::Table).all(|o| {
                let other = o.shape.footprint_radius() + SPAWN_MARGIN;
                (o.pose.translation().xy() - nalgebra::Vector2::new(x, y)).norm() >= r + other
            });
            if clear {
                ok = Some((x, y));
                break;
            }
        }
        let (x, y) = ok?;
        let yaw = rng.gen_range(-MAX_YAW..=MAX_YAW);
        placed.push(ObjectSpec { instance_id, class_id, kind, shape, pose: rest_pose(&shape, x, y, yaw) });
    }
    Some(placed)
}

/// Deterministic task for `level` (1, 2 or 3) and `seed`.
///
/// Level `L` moves `L + 1` blocks. Levels 1 and 2 place each block on its own
/// pad; level 3 stacks all four blocks on one pad, each on the previous.
pub fn generate_task(level: u8, seed: u64) -> Result<TaskSpec, SimError> {
    if !(1..=3).contains(&level) {
        return Err(SimError::InvalidLevel(level));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ level as u64);
    let n_blocks = level as u32 + 1;
    let mut shapes = Vec::new();
    for k in 0..n_blocks {
        shapes.push((class::BLOCK_BASE + k, class::BLOCK_BASE + k, ObjectKind::Block, block_shape(k + 1)));
    }
    let n_pads = if level == 3 { 1 } else { n_blocks };
    for k in 0..n_pads {
        shapes.push((class::PAD_BASE + k, class::PAD_BASE + k, ObjectKind::Pad, pad_shape()));
    }
    if rng.gen_bool(DISTRACTOR_PROBABILITY) {
        shapes.push((class::DISTRACTOR, class::DISTRACTOR, ObjectKind::Distractor, distractor_shape()));
    }

    let mut objects = None;
    for _ in 0..MAX_LAYOUT_ATTEMPTS {
        if let Some(layout) = try_layout(&mut rng, &shapes) {
            objects = Some(layout);
            break;
        }
    }
    let objects = objects.ok_or(SimError::SpawnFailed(MAX_LAYOUT_ATTEMPTS))?;

    let mut goals = Vec::new();
    for k in 0..n_blocks {
        let block = class::BLOCK_BASE + k;
        let bh = block_shape(k + 1).half_extents.z;
        let (support_id, height) = if level == 3 && k > 0 {
            (block - 1, block_shape(k).half_extents.z + bh)
        } else {
            let pad = if level == 3 { class::PAD_BASE } else { class::PAD_BASE + k };
            (pad, pad_shape().half_extents.z + bh)
        };
        goals.push(Goal {
            instance_id: block,
            support_id,
            relative_pose: Pose::from_translation(Vector3::new(0.0, 0.0, height)),
            tolerance_m: DEFAULT_TOLERANCE_M,
            tolerance_rad: DEFAULT_TOLERANCE_RAD,
        });
    }

    Ok(TaskSpec { level, n_interactions: 3 * n_blocks as usize, objects, goals, rng_seed: seed })
}

/// Copy of `task` with every movable object shifted and turned by uniform
/// noise within `pert`. Draws are rejected while footprints come too close;
/// the original layout is kept if no draw succeeds.
pub fn perturb_layout(task: &TaskSpec, pert: Perturbation, rng: &mut impl Rng) -> TaskSpec {
    if pert.is_zero() {
        return task.clone();
    }
    for _ in 0..MAX_LAYOUT_ATTEMPTS {
        let mut out = task.clone();
        for o in out.objects.iter_mut().filter(|o| o.kind != ObjectKind::Table) {
            let dx = rng.gen_range(-pert.translation..=pert.translation);
            let dy = rng.gen_range(-pert.translation..=pert.translation);
            let dyaw = rng.gen_range(-pert.rotation..=pert.rotation);
            let t = o.pose.translation();
            o.pose = Pose::from_xyz_yaw(t.x + dx, t.y + dy, t.z, o.pose.yaw() + dyaw);
        }
        if footprints_clear(&out.objects, PERTURB_MARGIN) {
            return out;
        }
    }
    task.clone()
}
