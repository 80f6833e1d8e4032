use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::scene::{SceneConfig, SceneSampler};
use super::task::TaskSpec;
use super::SimError;
use crate::planner::{plan_rrt_connect, PlanConfig};
use crate::se3::Pose;
use crate::segmenter::{InteractionPhase, PhaseKind};
use crate::state::{ProprioFrame, TrajectoryState, JOINT_COUNT};

/// Fixed linear map from the end-effector twist to joint velocities.
pub const JOINT_MAP: [[f64; 6]; JOINT_COUNT] = [
    [0.9, -0.2, 0.1, 0.05, 0.0, 0.3],
    [0.1, 1.1, -0.3, 0.0, 0.2, 0.0],
    [-0.4, 0.2, 1.0, 0.1, 0.0, -0.1],
    [0.0, 0.3, 0.2, 0.8, -0.1, 0.2],
    [0.2, 0.0, -0.1, 0.1, 0.9, 0.0],
    [0.3, -0.1, 0.0, -0.2, 0.1, 1.0],
    [0.1, 0.1, 0.1, 0.3, 0.3, 0.3],
];

/// Height fractions, from low to high, of the four lift and retreat frames.
const RISE: [f64; 4] = [0.35, 0.6, 0.85, 1.0];
const TRANSIT_FRAMES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    pub scene: SceneConfig,
    pub planner: PlanConfig,
    /// Seconds between frames.
    pub dt: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self { scene: SceneConfig::default(), planner: PlanConfig::default(), dt: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoFrame {
    pub proprio: ProprioFrame,
    pub attached: Option<u32>,
    pub allow_collision: bool,
    /// Pose of every task object, in task order.
    pub object_poses: Vec<Pose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub task: TaskSpec,
    pub frames: Vec<DemoFrame>,
    /// Phase boundaries as scripted.
    pub phases: Vec<InteractionPhase>,
    pub scene: SceneConfig,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn proprio(&self) -> Vec<ProprioFrame> {
        self.frames.iter().map(|f| f.proprio.clone()).collect()
    }

    pub fn sampler(&self) -> SceneSampler {
        SceneSampler::new(&self.task, &self.scene)
    }

    pub fn state(&self, t: usize, sampler: &SceneSampler) -> TrajectoryState {
        let f = &self.frames[t];
        TrajectoryState {
            cloud: sampler.cloud(&f.object_poses),
            proprio: f.proprio.clone(),
            attached_instance: f.attached,
        }
    }
}

fn joint_velocities(prev: &Pose, next: &Pose, dt: f64) -> [f64; JOINT_COUNT] {
    let dp = (next.translation() - prev.translation()) / dt;
    let dr = nalgebra::Rotation3::from_matrix_unchecked(next.rotation() * prev.rotation().transpose());
    let w = dr.scaled_axis() / dt;
    let twist = Vector6::new(dp.x, dp.y, dp.z, w.x, w.y, w.z);
    let mut out = [0.0; JOINT_COUNT];
    for (o, row) in out.iter_mut().zip(JOINT_MAP.iter()) {
        *o = row.iter().zip(twist.iter()).map(|(a, b)| a * b).sum();
    }
    out
}

fn at_height(p: &Pose, z: f64) -> Pose {
    let t = p.translation();
    p.with_translation(Vector3::new(t.x, t.y, z))
}

/// Resamples a waypoint path to `n` poses evenly spaced in the planner metric,
/// excluding the start and ending exactly at the goal.
fn resample(path: &[Pose], n: usize, cfg: &PlanConfig) -> Vec<Pose> {
    let lengths: Vec<f64> = path.windows(2).map(|w| cfg.distance(&w[0], &w[1])).collect();
    let total: f64 = lengths.iter().sum();
    let goal = *path.last().expect("non-empty path");
    if total <= 0.0 {
        return vec![goal; n];
    }
    (1..=n)
        .map(|k| {
            if k == n {
                return goal;
            }
            let mut s = total * k as f64 / n as f64;
            for (i, len) in lengths.iter().enumerate() {
                if s <= *len || i == lengths.len() - 1 {
                    let f = if *len > 0.0 { (s / len).min(1.0) } else { 1.0 };
                    return path[i].interpolate(&path[i + 1], f);
                }
                s -= len;
            }
            goal
        })
        .collect()
}

struct Recorder<'a> {
    task: &'a TaskSpec,
    frames: Vec<DemoFrame>,
    poses: Vec<Pose>,
    gripper: Pose,
    open: bool,
    /// Attached object index and its offset in the gripper frame.
    attached: Option<(usize, Pose)>,
    dt: f64,
}

impl Recorder<'_> {
    fn push(&mut self, pose: Pose, allow_collision: bool) {
        let prev = self.frames.last().map(|f| f.proprio.ee_pose).unwrap_or(pose);
        self.gripper = pose;
        if let Some((k, offset)) = self.attached {
            self.poses[k] = pose.compose(&offset);
        }
        self.frames.push(DemoFrame {
            proprio: ProprioFrame {
                timestep: self.frames.len() as u32,
                gripper_open: self.open,
                joint_velocities: joint_velocities(&prev, &pose, self.dt),
                ee_pose: pose,
            },
            attached: self.attached.map(|(k, _)| self.task.objects[k].instance_id),
            allow_collision,
            object_poses: self.poses.clone(),
        });
    }

    fn next_t(&self) -> u32 {
        self.frames.len() as u32
    }

    fn vertical(&mut self, from_z: f64, to_z: f64, xy_yaw: &Pose) {
        for f in RISE {
            let (lo, hi) = if to_z >= from_z { (from_z, to_z) } else { (to_z, from_z) };
            let frac = if to_z >= from_z { f } else { 1.0 - f };
            self.push(at_height(xy_yaw, lo + (hi - lo) * frac), true);
        }
    }
}

/// Scripted pick-and-place demonstration solving every goal of `task` in order.
///
/// Each cycle is a retreat to the transit height, a planned transit, a descent
/// to the grasp, one still frame, two closing frames, a lift, a planned
/// transit and a descent to the release, which ends on the reopening frame.
/// Frame counts are fixed, so demonstrations of one level all have the same
/// length.
pub fn scripted_expert(task: &TaskSpec, cfg: &ExpertConfig) -> Result<Demonstration, SimError> {
    let sampler = SceneSampler::new(task, &cfg.scene);
    let z_safe = cfg.scene.z_safe;
    let home = Pose::from_xyz_yaw(0.0, 0.0, z_safe, 0.0);
    let mut rec = Recorder {
        task,
        frames: Vec::new(),
        poses: task.initial_poses(),
        gripper: home,
        open: true,
        attached: None,
        dt: cfg.dt,
    };
    let mut phases = Vec::new();
    rec.push(home, true);

    for (leg, goal) in task.goals.iter().enumerate() {
        let obj = task.object_index(goal.instance_id).expect("goal object exists");
        let cycle_start = if leg == 0 { 0 } else { rec.next_t() };

        let here = rec.gripper;
        rec.vertical(here.translation().z, z_safe, &here);

        let grasp = rec.poses[obj];
        let above = at_height(&grasp, z_safe);
        let mut plan = cfg.planner.clone();
        plan.rng_seed = cfg.planner.rng_seed ^ (2 * leg as u64);
        let world = sampler.world(task, &rec.poses, None);
        let path = plan_rrt_connect(&world, &rec.gripper, &above, &plan, false)
            .map_err(|source| SimError::ExpertPlanningFailed { leg, source })?;
        for p in resample(&path, TRANSIT_FRAMES, &plan) {
            rec.push(p, false);
        }
        rec.vertical(z_safe, grasp.translation().z, &grasp);
        rec.push(grasp, true);
        phases.push(InteractionPhase::new(PhaseKind::PreContact, cycle_start, rec.next_t() - 1));

        let close = rec.next_t();
        rec.open = false;
        rec.attached = Some((obj, grasp.inverse().compose(&rec.poses[obj])));
        rec.push(grasp, true);
        rec.push(grasp, true);
        phases.push(InteractionPhase::new(PhaseKind::Grasping, close, close + 1));

        let lift = rec.next_t();
        rec.vertical(grasp.translation().z, z_safe, &grasp);
        let (_, offset) = rec.attached.expect("attached during transport");
        let target_obj = task.goal_target(goal, &rec.poses);
        let release = target_obj.compose(&offset.inverse());
        let above = at_height(&release, z_safe);
        plan.rng_seed = cfg.planner.rng_seed ^ (2 * leg as u64 + 1);
        let world = sampler.world(task, &rec.poses, Some(obj));
        let path = plan_rrt_connect(&world, &rec.gripper, &above, &plan, false)
            .map_err(|source| SimError::ExpertPlanningFailed { leg, source })?;
        for p in resample(&path, TRANSIT_FRAMES, &plan) {
            rec.push(p, false);
        }
        rec.vertical(z_safe, release.translation().z, &release);
        rec.open = true;
        rec.attached = None;
        rec.push(release, true);
        phases.push(InteractionPhase::new(PhaseKind::PostContact, lift, rec.next_t() - 1));
    }

    Ok(Demonstration { task: task.clone(), frames: rec.frames, phases, scene: cfg.scene.clone() })
}
