use std::str::FromStr;
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::expert::{scripted_expert, Demonstration, ExpertConfig};
use super::scene::SceneSampler;
use super::task::{class, perturb_layout, ObjectKind, Perturbation, TaskSpec, WORKSPACE_MAX, WORKSPACE_MIN};
use super::SimError;
use crate::cloud::{feature, point_descriptors, scene_descriptor, ClassVocabulary, DescriptorSet, LabeledCloud, NeighborIndex};
use crate::invariant::{check_invariant_point, gt_correspondences, gt_invariant_region, InvariantError, InvariantRegion, StatePair};
use crate::matcher::{dual_softmax, regress_pose, route_state, CorrespondenceMatrix, RoutingFeatures};
use crate::planner::{plan_rrt_connect, PlanConfig};
use crate::se3::{solve_weighted_procrustes, Pose, WeightedPointSet};
use crate::segmenter::{sample_macro_steps, segment_rule_based, Decomposition, PhaseKind, SegmentError};
use crate::state::TrajectoryState;

/// How the pipeline obtains regions and correspondences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionMode {
    /// Ground-truth regions from auxiliary demonstrations and exact correspondences.
    Oracle,
    /// Nearest segment to the action and dual-softmax matching of point descriptors.
    Descriptor,
    /// Uniformly random action poses.
    Random,
}

impl RegionMode {
    pub fn name(self) -> &'static str {
        match self {
            RegionMode::Oracle => "oracle",
            RegionMode::Descriptor => "descriptor",
            RegionMode::Random => "random",
        }
    }
}

impl FromStr for RegionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(RegionMode::Oracle),
            "descriptor" => Ok(RegionMode::Descriptor),
            "random" => Ok(RegionMode::Random),
            other => Err(format!("unknown mode `{other}` (expected oracle, descriptor or random)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: RegionMode,
    pub temperature: f64,
    pub match_threshold: f64,
    /// Invariance tolerance, meters.
    pub epsilon: f64,
    pub stride: u32,
    pub v_zero_threshold: f64,
    pub routing: bool,
    pub gripper_weight: f64,
    /// Auxiliary demonstrations used to pick ground-truth regions.
    pub oracle_aux_demos: usize,
    pub oracle_aux_translation: f64,
    pub oracle_aux_rotation: f64,
    /// Neighborhood size of point descriptors.
    pub descriptor_k: usize,
    /// Radius of the sphere descriptors are lifted onto before matching.
    pub descriptor_scale: f64,
    pub icp_iterations: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: RegionMode::Oracle,
            temperature: crate::matcher::DEFAULT_TEMPERATURE,
            match_threshold: crate::matcher::DEFAULT_MATCH_THRESHOLD,
            epsilon: crate::invariant::DEFAULT_EPSILON,
            stride: crate::segmenter::DEFAULT_STRIDE,
            v_zero_threshold: crate::segmenter::DEFAULT_V_ZERO,
            routing: true,
            gripper_weight: crate::matcher::DEFAULT_GRIPPER_WEIGHT,
            oracle_aux_demos: 2,
            oracle_aux_translation: 0.03,
            oracle_aux_rotation: 0.1,
            descriptor_k: 8,
            descriptor_scale: 6.0,
            icp_iterations: 10,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RolloutError {
    #[error("demonstration cannot be segmented: {0}")]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Invariant(#[from] InvariantError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResult {
    pub model: String,
    pub task_id: String,
    pub level: u8,
    pub seed: u64,
    pub trial: u32,
    pub success: bool,
    pub phases_completed: usize,
    /// Seconds; the only field that differs between identical reruns.
    pub wall_time: f64,
    pub failure: Option<String>,
}

impl TrialResult {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &TrialResult) -> bool {
        self.model == other.model
            && self.task_id == other.task_id
            && self.level == other.level
            && self.seed == other.seed
            && self.trial == other.trial
            && self.success == other.success
            && self.phases_completed == other.phases_completed
            && self.failure == other.failure
    }
}

/// Why a trial stopped early.
#[derive(Debug, Clone, PartialEq)]
pub enum TrialOutcome {
    Finished,
    Failed(String),
}

/// Region of one macro-step in the demonstration cloud.
#[derive(Debug, Clone)]
struct StepRegion {
    instance_id: u32,
    indices: Vec<usize>,
    points: Vec<Vector3<f64>>,
    descriptors: Option<DescriptorSet>,
}

/// Everything a rollout needs from the demonstration, computed once per task.
#[derive(Debug, Clone)]
pub struct PreparedDemo {
    pub demo: Demonstration,
    pub decomposition: Decomposition,
    pub macro_steps: Vec<u32>,
    sampler: SceneSampler,
    vocab: ClassVocabulary,
    routing: Vec<RoutingFeatures>,
    /// `regions[k]` serves the action from macro-step `k` to `k + 1`.
    regions: Vec<Option<StepRegion>>,
    clouds: Vec<LabeledCloud>,
}

fn normalized_t(t: u32, len: usize) -> f64 {
    t as f64 / len.max(1) as f64
}

fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &p in parts {
        h ^= p;
        h = h.wrapping_mul(0x0000_0100_0000_01B3).rotate_left(17) ^ (h >> 29);
    }
    h
}

/// True when the indexed points are not all on one line.
fn spans_plane(indices: &[usize], points: &[Vector3<f64>]) -> bool {
    let Some(&first) = indices.first() else { return false };
    let p0 = points[first];
    let far = indices.iter().map(|&i| points[i]).max_by(|a, b| (a - p0).norm().total_cmp(&(b - p0).norm())).unwrap();
    let axis = far - p0;
    if axis.norm() < 1e-6 {
        return false;
    }
    let axis = axis.normalize();
    indices.iter().any(|&i| (points[i] - p0).cross(&axis).norm() > 1e-4)
}

fn nearest_segment(cloud: &LabeledCloud, target: &Vector3<f64>, excluded: &[u32]) -> Option<u32> {
    let mut best: Option<(f64, u32)> = None;
    for (p, &inst) in cloud.points().iter().zip(cloud.instance_ids()) {
        if excluded.contains(&inst) {
            continue;
        }
        let d = (p - target).norm_squared();
        if best.is_none_or(|(bd, bi)| d < bd || (d == bd && inst < bi)) {
            best = Some((d, inst));
        }
    }
    best.map(|(_, i)| i)
}

impl PreparedDemo {
    pub fn new(demo: &Demonstration, pipeline: &PipelineConfig, expert: &ExpertConfig) -> Result<Self, RolloutError> {
        let proprio = demo.proprio();
        let decomposition = segment_rule_based(&proprio, pipeline.v_zero_threshold)?;
        let macro_steps: Vec<u32> = decomposition
            .phases
            .iter()
            .flat_map(|p| sample_macro_steps(p, pipeline.stride))
            .collect();
        let sampler = demo.sampler();
        let vocab = ClassVocabulary::new(class::names());
        let clouds: Vec<LabeledCloud> =
            macro_steps.iter().map(|&m| sampler.cloud(&demo.frames[m as usize].object_poses)).collect();
        let routing = macro_steps
            .iter()
            .zip(&clouds)
            .map(|(&m, cloud)| RoutingFeatures {
                scene: scene_descriptor(cloud, &vocab).expect("scene classes are in the vocabulary"),
                gripper_open: demo.frames[m as usize].proprio.gripper_open,
                normalized_t: normalized_t(m, demo.len()),
            })
            .collect();

        let mut prepared = PreparedDemo {
            demo: demo.clone(),
            decomposition,
            macro_steps,
            sampler,
            vocab,
            routing,
            regions: Vec::new(),
            clouds,
        };
        prepared.regions = match pipeline.mode {
            RegionMode::Oracle => prepared.oracle_regions(pipeline, expert)?,
            RegionMode::Descriptor => prepared.descriptor_regions(pipeline),
            RegionMode::Random => vec![None; prepared.macro_steps.len().saturating_sub(1)],
        };
        Ok(prepared)
    }

    fn target_kind(&self, k: usize) -> PhaseKind {
        let m = self.macro_steps[k + 1];
        let idx = self.decomposition.phase_index_of(m).expect("macro-steps lie inside phases");
        self.decomposition.phases[idx].kind
    }

    fn state(&self, k: usize) -> TrajectoryState {
        let f = &self.demo.frames[self.macro_steps[k] as usize];
        TrajectoryState { cloud: self.clouds[k].clone(), proprio: f.proprio.clone(), attached_instance: f.attached }
    }

    fn oracle_regions(&self, pipeline: &PipelineConfig, expert: &ExpertConfig) -> Result<Vec<Option<StepRegion>>, RolloutError> {
        let task = &self.demo.task;
        let pert = Perturbation { translation: pipeline.oracle_aux_translation, rotation: pipeline.oracle_aux_rotation };
        let mut aux = Vec::new();
        for a in 0..pipeline.oracle_aux_demos.max(1) {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[task.rng_seed, task.level as u64, 0xA0C5, a as u64]));
            let layout = perturb_layout(task, pert, &mut rng);
            let d = scripted_expert(&layout, expert)?;
            let sampler = d.sampler();
            aux.push((d, sampler));
        }

        let mut regions = Vec::new();
        for k in 0..self.macro_steps.len() - 1 {
            let m = self.macro_steps[k] as usize;
            let next = self.macro_steps[k + 1] as usize;
            let state_a = self.state(k);
            let aux_states: Vec<TrajectoryState> = aux.iter().map(|(d, s)| d.state(m, s)).collect();
            let pairs: Vec<StatePair<'_>> = aux
                .iter()
                .zip(&aux_states)
                .map(|((d, _), sb)| StatePair {
                    state_a: &state_a,
                    state_b: sb,
                    pose_a: self.demo.frames[next].proprio.ee_pose,
                    pose_b: d.frames[next].proprio.ee_pose,
                })
                .collect();
            let region = gt_invariant_region(&pairs, self.target_kind(k))?;
            let invariant: Vec<usize> = region
                .point_indices
                .iter()
                .copied()
                .filter(|&i| check_invariant_point(&state_a.cloud.points()[i], &pairs, pipeline.epsilon))
                .collect();
            let indices = if spans_plane(&invariant, state_a.cloud.points()) { invariant } else { region.point_indices.clone() };
            let points = indices.iter().map(|&i| state_a.cloud.points()[i]).collect();
            regions.push(Some(StepRegion { instance_id: region.segment_instance_id, indices, points, descriptors: None }));
        }
        Ok(regions)
    }

    fn descriptor_regions(&self, pipeline: &PipelineConfig) -> Vec<Option<StepRegion>> {
        (0..self.macro_steps.len() - 1)
            .map(|k| {
                let next = self.macro_steps[k + 1] as usize;
                let state = self.state(k);
                let target = *self.demo.frames[next].proprio.ee_pose.translation();
                let mut excluded = vec![0];
                if self.target_kind(k) == PhaseKind::PostContact {
                    excluded.extend(state.attached_instance);
                }
                let inst = nearest_segment(&state.cloud, &target, &excluded)?;
                let indices = state.cloud.segment_indices(inst);
                let segment = state.cloud.subset(&indices);
                let descriptors = point_descriptors(&segment, pipeline.descriptor_k.min(segment.len())).ok()?;
                Some(StepRegion {
                    instance_id: inst,
                    points: segment.points().to_vec(),
                    indices,
                    descriptors: Some(descriptors),
                })
            })
            .collect()
    }

    /// Region used for the action from macro-step `k`, in demonstration cloud indices.
    pub fn region(&self, k: usize) -> Option<InvariantRegion> {
        self.regions.get(k)?.as_ref().map(|r| InvariantRegion {
            state_ref: self.macro_steps[k],
            segment_instance_id: r.instance_id,
            point_indices: r.indices.clone(),
        })
    }

    pub fn n_interactions(&self) -> usize {
        self.decomposition.phases.len()
    }
}

/// Executor state of one trial.
struct World<'a> {
    task: &'a TaskSpec,
    poses: Vec<Pose>,
    gripper: Pose,
    open: bool,
    attached: Option<(usize, Pose)>,
    t: u32,
}

impl World<'_> {
    fn move_gripper(&mut self, pose: Pose) {
        self.gripper = pose;
        if let Some((k, offset)) = self.attached {
            self.poses[k] = pose.compose(&offset);
        }
    }

    fn set_gripper(&mut self, open: bool) {
        if open {
            self.attached = None;
        } else if self.attached.is_none() {
            let p = *self.gripper.translation();
            self.attached = self
                .task
                .objects
                .iter()
                .enumerate()
                .filter(|(_, o)| o.kind != ObjectKind::Table)
                .find(|(k, o)| o.shape.contains_local(&self.poses[*k].inverse().transform_point(&p)))
                .map(|(k, _)| (k, self.gripper.inverse().compose(&self.poses[k])));
        }
        self.open = open;
    }
}

fn embed(rows: &DescriptorSet, mean: &[f64], std: &[f64], scale: f64) -> DescriptorSet {
    const COLUMNS: [usize; 8] = [
        feature::LINEARITY,
        feature::PLANARITY,
        feature::SCATTERING,
        feature::HEIGHT,
        feature::CENTROID_DISTANCE,
        feature::PCA_OFFSET,
        feature::PCA_OFFSET + 1,
        feature::PCA_OFFSET + 2,
    ];
    rows.map_rows(|r| {
        let f: Vec<f64> = COLUMNS.iter().enumerate().map(|(c, &col)| (r[col] - mean[c]) / std[c]).collect();
        let n2: f64 = f.iter().map(|v| v * v).sum();
        // inverse stereographic projection onto a sphere of radius `scale`
        let mut out: Vec<f64> = f.iter().map(|v| scale * 2.0 * v / (n2 + 1.0)).collect();
        out.push(scale * (n2 - 1.0) / (n2 + 1.0));
        out
    })
    .expect("fixed width")
}

fn column_stats(sets: &[&DescriptorSet]) -> (Vec<f64>, Vec<f64>) {
    let cols = [0usize, 1, 2, 3, 4, 5, 6, 7];
    let n: usize = sets.iter().map(|s| s.len()).sum();
    let mut mean = vec![0.0; cols.len()];
    let mut var = vec![0.0; cols.len()];
    for s in sets {
        for r in s.rows() {
            for c in cols {
                mean[c] += r[c] / n as f64;
            }
        }
    }
    for s in sets {
        for r in s.rows() {
            for c in cols {
                var[c] += (r[c] - mean[c]).powi(2) / n as f64;
            }
        }
    }
    let std = var.iter().map(|v| v.sqrt().max(1e-6)).collect();
    (mean, std)
}

fn icp_refine(map: Pose, region: &[Vector3<f64>], scene: &[Vector3<f64>], iterations: usize) -> Pose {
    let index = NeighborIndex::new(scene);
    let mut current = map;
    for _ in 0..iterations {
        let dst: Vec<Vector3<f64>> = region
            .iter()
            .map(|p| scene[index.nearest(&current.transform_point(p)).expect("non-empty scene").0])
            .collect();
        match solve_weighted_procrustes(&WeightedPointSet::uniform(region.to_vec()), &WeightedPointSet::uniform(dst)) {
            Ok(next) => {
                let converged = next.translation_distance(&current) < 1e-9 && next.angle_to(&current) < 1e-9;
                current = next;
                if converged {
                    break;
                }
            }
            Err(_) => break,
        }
    }
    current
}

fn random_pose(rng: &mut impl Rng) -> Pose {
    let x = rng.gen_range(WORKSPACE_MIN[0]..=WORKSPACE_MAX[0]);
    let y = rng.gen_range(WORKSPACE_MIN[1]..=WORKSPACE_MAX[1]);
    let z = rng.gen_range(WORKSPACE_MIN[2]..=WORKSPACE_MAX[2]);
    let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    Pose::from_xyz_yaw(x, y, z, yaw)
}

fn predict_pose(
    prepared: &PreparedDemo,
    pipeline: &PipelineConfig,
    k: usize,
    world: &World<'_>,
    cloud: &LabeledCloud,
    rng: &mut ChaCha8Rng,
) -> Result<Pose, String> {
    let demo_pose = prepared.demo.frames[prepared.macro_steps[k + 1] as usize].proprio.ee_pose;
    if pipeline.mode == RegionMode::Random {
        return Ok(random_pose(rng));
    }
    let region = prepared.regions[k].as_ref().ok_or_else(|| format!("no region for macro-step {k}"))?;
    let obj = world.task.object_index(region.instance_id).ok_or("region refers to an unknown object")?;
    let scene_indices = cloud.segment_indices(region.instance_id);
    if scene_indices.is_empty() {
        return Err(format!("segment {} is not observed", region.instance_id));
    }
    let scene_points: Vec<Vector3<f64>> = scene_indices.iter().map(|&j| cloud.points()[j]).collect();

    match pipeline.mode {
        RegionMode::Oracle => {
            let demo_obj = prepared.demo.frames[prepared.macro_steps[k] as usize].object_poses[obj];
            let moved = world.poses[obj].compose(&demo_obj.inverse());
            let guess = moved.compose(&demo_pose);
            let region_a = InvariantRegion { state_ref: 0, segment_instance_id: region.instance_id, point_indices: region.indices.clone() };
            let region_b = InvariantRegion { state_ref: 0, segment_instance_id: region.instance_id, point_indices: scene_indices.clone() };
            let pairs = gt_correspondences(&prepared.clouds[k], &region_a, &demo_pose, cloud, &region_b, &guess)
                .map_err(|e| e.to_string())?;
            let local: Vec<(usize, usize)> = pairs
                .iter()
                .enumerate()
                .map(|(i, &(_, j))| (i, scene_indices.binary_search(&j).expect("match lies in region_b")))
                .collect();
            let corr = CorrespondenceMatrix::from_pairs(region.points.len(), scene_points.len(), &local)
                .map_err(|e| e.to_string())?;
            regress_pose(&corr, &region.points, &scene_points, &demo_pose).map_err(|e| e.to_string())
        }
        RegionMode::Descriptor => {
            let region_desc = region.descriptors.as_ref().ok_or("region has no descriptors")?;
            let segment = cloud.subset(&scene_indices);
            let scene_desc = point_descriptors(&segment, pipeline.descriptor_k.min(segment.len())).map_err(|e| e.to_string())?;
            let (mean, std) = column_stats(&[
                &region_desc.map_rows(select_columns).expect("fixed width"),
                &scene_desc.map_rows(select_columns).expect("fixed width"),
            ]);
            let hr = embed(region_desc, &mean, &std, pipeline.descriptor_scale);
            let hs = embed(&scene_desc, &mean, &std, pipeline.descriptor_scale);
            let soft = dual_softmax(&hr, &hs, pipeline.temperature).map_err(|e| e.to_string())?;
            let corr = CorrespondenceMatrix::from_soft(soft, pipeline.match_threshold);
            let pose = regress_pose(&corr, &region.points, &scene_points, &demo_pose).map_err(|e| e.to_string())?;
            if pipeline.icp_iterations == 0 {
                return Ok(pose);
            }
            let map = pose.compose(&demo_pose.inverse());
            let refined = icp_refine(map, &region.points, &scene_points, pipeline.icp_iterations);
            Ok(refined.compose(&demo_pose))
        }
        RegionMode::Random => unreachable!(),
    }
}

fn select_columns(r: &[f64]) -> Vec<f64> {
    vec![
        r[feature::LINEARITY],
        r[feature::PLANARITY],
        r[feature::SCATTERING],
        r[feature::HEIGHT],
        r[feature::CENTROID_DISTANCE],
        r[feature::PCA_OFFSET],
        r[feature::PCA_OFFSET + 1],
        r[feature::PCA_OFFSET + 2],
    ]
}

/// Runs one closed-loop trial on a perturbed copy of the demonstrated layout.
pub fn execute_rollout(
    prepared: &PreparedDemo,
    pipeline: &PipelineConfig,
    planner: &PlanConfig,
    perturbation: Perturbation,
    seed: u64,
    trial: u32,
) -> TrialResult {
    let started = Instant::now();
    let task = &prepared.demo.task;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, task.level as u64, trial as u64, 0x7E57]));
    let layout = perturb_layout(task, perturbation, &mut rng);
    let (outcome, world) = run_loop(prepared, pipeline, planner, &layout, &mut rng, seed, trial);

    let reached = world.t;
    let phases_completed = prepared.decomposition.phases.iter().filter(|p| p.end <= reached).count();
    let success = matches!(outcome, TrialOutcome::Finished) && world.attached.is_none() && layout.all_goals_met(&world.poses);
    TrialResult {
        model: pipeline.mode.name().to_string(),
        task_id: task.task_id(),
        level: task.level,
        seed,
        trial,
        success,
        phases_completed: phases_completed.min(task.n_interactions),
        wall_time: started.elapsed().as_secs_f64(),
        failure: match outcome {
            TrialOutcome::Finished if !success => Some("goals not met".into()),
            TrialOutcome::Finished => None,
            TrialOutcome::Failed(msg) => Some(msg),
        },
    }
}

fn run_loop<'a>(
    prepared: &PreparedDemo,
    pipeline: &PipelineConfig,
    planner: &PlanConfig,
    layout: &'a TaskSpec,
    rng: &mut ChaCha8Rng,
    seed: u64,
    trial: u32,
) -> (TrialOutcome, World<'a>) {
    let first = &prepared.demo.frames[0].proprio;
    let mut world = World {
        task: layout,
        poses: layout.initial_poses(),
        gripper: first.ee_pose,
        open: first.gripper_open,
        attached: None,
        t: 0,
    };
    let n = prepared.macro_steps.len();
    let mut k = 0usize;
    for step in 0..3 * n {
        let cloud = prepared.sampler.observe(&world.poses, rng);
        if pipeline.routing {
            let current = RoutingFeatures {
                scene: scene_descriptor(&cloud, &prepared.vocab).expect("scene classes are in the vocabulary"),
                gripper_open: world.open,
                normalized_t: normalized_t(world.t, prepared.demo.len()),
            };
            k = route_state(&current, &prepared.routing, pipeline.gripper_weight)
                .expect("demonstration has macro-steps")
                .demo_index;
        }
        if k + 1 >= n {
            return (TrialOutcome::Finished, world);
        }
        let frame = &prepared.demo.frames[prepared.macro_steps[k + 1] as usize];
        let target = match predict_pose(prepared, pipeline, k, &world, &cloud, rng) {
            Ok(p) => p,
            Err(e) => return (TrialOutcome::Failed(format!("macro-step {k}: {e}")), world),
        };
        let skip = world.attached.map(|(i, _)| i);
        let plan_world = prepared.sampler.world(layout, &world.poses, skip);
        let mut cfg = planner.clone();
        cfg.rng_seed = mix_seed(&[planner.rng_seed, seed, trial as u64, step as u64]);
        if let Err(e) = plan_rrt_connect(&plan_world, &world.gripper, &target, &cfg, frame.allow_collision) {
            return (TrialOutcome::Failed(format!("macro-step {k}: {e}")), world);
        }
        world.move_gripper(target);
        world.set_gripper(frame.proprio.gripper_open);
        world.t = frame.proprio.timestep;
        if !pipeline.routing {
            k += 1;
        }
    }
    (TrialOutcome::Failed("step budget exhausted".into()), world)
}
