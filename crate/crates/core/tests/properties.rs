use nalgebra::{DMatrix, UnitQuaternion, Vector3};
use proptest::prelude::*;

use oneshot_core::cloud::{feature, point_descriptors, voxel_downsample, DescriptorSet, LabeledCloud, NeighborIndex};
use oneshot_core::invariant::{
    check_invariant_point, gt_correspondences, gt_invariant_region, gt_invariant_region_with_cost, InvariantRegion, StatePair,
};
use oneshot_core::matcher::{binarize, dual_softmax, dual_softmax_factors, regress_pose, CorrespondenceMatrix};
use oneshot_core::planner::{edge_is_free_at, plan_rrt_connect, Aabb, PlanConfig, WorldModel};
use oneshot_core::se3::{solve_weighted_procrustes, weighted_residual, Pose, WeightedPointSet};
use oneshot_core::segmenter::{sample_macro_steps, segment_rule_based, InteractionPhase, PhaseKind};
use oneshot_core::sim::{execute_rollout, generate_task, scripted_expert, ExpertConfig, Perturbation, PipelineConfig, PreparedDemo};
use oneshot_core::state::{ProprioFrame, TrajectoryState};
use oneshot_core::vlm::{parse_response, to_response_json};

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn rigid() -> impl Strategy<Value = Pose> {
    ((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), vec3(2.0)).prop_filter_map(
        "degenerate quaternion",
        |((w, i, j, k), t)| {
            let q = nalgebra::Quaternion::new(w, i, j, k);
            (q.norm() > 1e-3).then(|| Pose::from_quaternion(UnitQuaternion::from_quaternion(q), t))
        },
    )
}

fn yaw_shift() -> impl Strategy<Value = Pose> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -3.1f64..3.1).prop_map(|(x, y, z, yaw)| Pose::from_xyz_yaw(x, y, z, yaw))
}

/// Points whose spread is not concentrated on a line.
fn spread_points(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vector3<f64>>> {
    prop::collection::vec(vec3(1.0), n).prop_filter("nearly collinear", |pts| {
        let c = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
        let mut cov = nalgebra::Matrix3::zeros();
        for p in pts {
            cov += (p - c) * (p - c).transpose();
        }
        let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev[1] > 1e-2
    })
}

fn proprio(t: u32) -> ProprioFrame {
    ProprioFrame { timestep: t, gripper_open: true, joint_velocities: [0.0; 7], ee_pose: Pose::identity() }
}

fn state(cloud: LabeledCloud) -> TrajectoryState {
    TrajectoryState { cloud, proprio: proprio(0), attached_instance: None }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn procrustes_recovers_exact_transforms(pts in spread_points(4..20), t in rigid()) {
        let dst: Vec<_> = pts.iter().map(|p| t.transform_point(p)).collect();
        let est = solve_weighted_procrustes(&WeightedPointSet::uniform(pts), &WeightedPointSet::uniform(dst)).unwrap();
        prop_assert!(est.angle_to(&t) < 1e-6);
        prop_assert!(est.translation_distance(&t) < 1e-9);
    }

    #[test]
    fn procrustes_is_locally_optimal(pts in spread_points(4..12), t in rigid(), noise in prop::collection::vec(vec3(0.05), 12), perturb in prop::collection::vec((vec3(1.0), vec3(1.0)), 100)) {
        let dst: Vec<_> = pts.iter().zip(&noise).map(|(p, n)| t.transform_point(p) + n).collect();
        let src = WeightedPointSet::uniform(pts);
        let dst = WeightedPointSet::uniform(dst);
        let est = solve_weighted_procrustes(&src, &dst).unwrap();
        let best = weighted_residual(&est, &src, &dst);
        for (axis, shift) in perturb {
            let Some(axis) = axis.try_normalize(1e-9) else { continue };
            let delta = Pose::from_axis_angle(&axis, 1e-3).compose(&Pose::from_translation(shift * 1e-3));
            prop_assert!(best <= weighted_residual(&est.compose(&delta), &src, &dst) + 1e-15);
        }
    }

    #[test]
    fn procrustes_never_reflects(pts in spread_points(4..12), axis in 0usize..3) {
        let mirrored: Vec<_> = pts.iter().map(|p| { let mut q = *p; q[axis] = -q[axis]; q }).collect();
        let est = solve_weighted_procrustes(&WeightedPointSet::uniform(pts), &WeightedPointSet::uniform(mirrored)).unwrap();
        prop_assert!((est.rotation().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_weight_points_are_ignored(pts in spread_points(5..12), t in rigid(), moved in vec3(5.0)) {
        let dst: Vec<_> = pts.iter().map(|p| t.transform_point(p)).collect();
        let mut w = vec![1.0; pts.len()];
        w[0] = 0.0;
        let a = solve_weighted_procrustes(&WeightedPointSet::new(pts.clone(), w.clone()).unwrap(), &WeightedPointSet::uniform(dst.clone())).unwrap();
        let mut dst2 = dst;
        dst2[0] = moved;
        let b = solve_weighted_procrustes(&WeightedPointSet::new(pts, w).unwrap(), &WeightedPointSet::uniform(dst2)).unwrap();
        prop_assert!(a.angle_to(&b) < 1e-12 && a.translation_distance(&b) < 1e-12);
    }

    #[test]
    fn pose_round_trips(t in rigid()) {
        let id = t.compose(&t.inverse());
        prop_assert!(id.angle_to(&Pose::identity()) < 1e-9 && id.translation_distance(&Pose::identity()) < 1e-12);
        let back = Pose::from_row_major(&t.to_row_major()).unwrap();
        prop_assert!(back.angle_to(&t) < 1e-12);
    }

    #[test]
    fn knn_is_sorted_and_unique(pts in prop::collection::vec(vec3(1.0), 1..80), q in vec3(1.5), k in 1usize..10) {
        let k = k.min(pts.len());
        let idx = NeighborIndex::new(&pts).knn(&q, k).unwrap();
        prop_assert_eq!(idx.len(), k);
        let mut seen = idx.clone();
        seen.sort();
        seen.dedup();
        prop_assert_eq!(seen.len(), k);
        let d: Vec<f64> = idx.iter().map(|&i| (pts[i] - q).norm()).collect();
        prop_assert!(d.windows(2).all(|w| w[0] <= w[1]));
        let mut all: Vec<f64> = pts.iter().map(|p| (p - q).norm()).collect();
        all.sort_by(f64::total_cmp);
        prop_assert_eq!(d[k - 1], all[k - 1]);
    }

    #[test]
    fn voxel_downsample_shrinks_and_is_idempotent(pts in prop::collection::vec(vec3(1.0), 1..200), voxel in 0.05f64..0.5) {
        let n = pts.len();
        let cloud = LabeledCloud::new(pts, (0..n as u32).map(|i| i % 3).collect(), (0..n as u32).map(|i| i % 3).collect()).unwrap();
        let once = voxel_downsample(&cloud, voxel).unwrap();
        prop_assert!(once.len() <= cloud.len());
        let twice = voxel_downsample(&once, voxel).unwrap();
        prop_assert_eq!(twice.len(), once.len());
        for (a, b) in once.points().iter().zip(twice.points()) {
            prop_assert!((a - b).norm() < 1e-12);
        }
        prop_assert_eq!(once.instance_ids(), twice.instance_ids());
    }

    #[test]
    fn shape_descriptors_are_rigid_invariant(pts in spread_points(12..40), t in rigid(), g in yaw_shift()) {
        let cloud = LabeledCloud::from_points(pts);
        let base = point_descriptors(&cloud, 6).unwrap();
        let moved = point_descriptors(&cloud.transformed(&t), 6).unwrap();
        let upright = point_descriptors(&cloud.transformed(&g), 6).unwrap();
        for i in 0..base.len() {
            for c in [feature::LINEARITY, feature::PLANARITY, feature::SCATTERING, feature::CENTROID_DISTANCE, feature::DENSITY, feature::CLASS] {
                let tol = 1e-6 * base.row(i)[c].abs().max(1.0);
                prop_assert!((base.row(i)[c] - moved.row(i)[c]).abs() < tol, "column {}", c);
            }
            prop_assert!((base.row(i)[feature::HEIGHT] - upright.row(i)[feature::HEIGHT]).abs() < 1e-6);
        }
    }
}

fn descriptor_set(rows: Vec<Vec<f64>>) -> DescriptorSet {
    DescriptorSet::from_rows(&rows).unwrap()
}

fn descriptors(n: std::ops::Range<usize>, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dual_softmax_bounds((hr, hs) in (1usize..6).prop_flat_map(|d| (descriptors(1..24, d), descriptors(1..24, d))), temp in 0.1f64..5.0) {
        let f = dual_softmax_factors(&descriptor_set(hr), &descriptor_set(hs), temp).unwrap();
        for i in 0..f.soft.nrows() {
            prop_assert!((f.row_factor.row(i).sum() - 1.0).abs() < 1e-9);
            for j in 0..f.soft.ncols() {
                let s = f.soft[(i, j)];
                prop_assert!(s > 0.0 && s <= 1.0);
                prop_assert!(s <= f.row_factor[(i, j)] && s <= f.col_factor[(i, j)]);
            }
        }
        for j in 0..f.soft.ncols() {
            prop_assert!((f.col_factor.column(j).sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dual_softmax_is_permutation_equivariant(hr in descriptors(1..10, 3), hs in descriptors(2..10, 3), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut perm: Vec<usize> = (0..hs.len()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&j| hs[j].clone()).collect();
        let a = dual_softmax(&descriptor_set(hr.clone()), &descriptor_set(hs), 1.0).unwrap();
        let b = dual_softmax(&descriptor_set(hr), &descriptor_set(shuffled), 1.0).unwrap();
        for i in 0..a.nrows() {
            for (jb, &ja) in perm.iter().enumerate() {
                prop_assert!((a[(i, ja)] - b[(i, jb)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn binarize_keeps_mutual_nearest(values in prop::collection::vec(0.0f64..1.0, 1..64), cols in 1usize..8, thr in 0.0f64..0.5) {
        let rows = values.len().div_ceil(cols);
        let mut data = values.clone();
        data.resize(rows * cols, 0.0);
        let soft = DMatrix::from_row_slice(rows, cols, &data);
        let pairs = binarize(&soft, thr);
        prop_assert!(pairs.len() <= rows.min(cols));
        for &(i, j) in &pairs {
            prop_assert!(soft[(i, j)] >= thr);
            prop_assert!((0..cols).all(|c| soft[(i, c)] <= soft[(i, j)]));
            prop_assert!((0..rows).all(|r| soft[(r, j)] <= soft[(i, j)]));
        }
    }

    #[test]
    fn regression_from_exact_pairs_recovers_scene_motion(pts in spread_points(4..30), g in rigid(), demo in rigid()) {
        let scene: Vec<_> = pts.iter().map(|p| g.transform_point(p)).collect();
        let pairs: Vec<_> = (0..pts.len()).map(|i| (i, i)).collect();
        let corr = CorrespondenceMatrix::from_pairs(pts.len(), scene.len(), &pairs).unwrap();
        let est = regress_pose(&corr, &pts, &scene, &demo).unwrap();
        let expected = g.compose(&demo);
        prop_assert!(est.angle_to(&expected) < 1e-6);
        prop_assert!(est.translation_distance(&expected) < 1e-6);
    }
}

/// Phase-shaped proprioception: open/approach, closed, open/transport per cycle.
fn cycles_strategy() -> impl Strategy<Value = Vec<(u32, u32, u32)>> {
    prop::collection::vec((2u32..12, 1u32..4, 2u32..12), 1..5)
}

fn frames_from_cycles(cycles: &[(u32, u32, u32)]) -> Vec<ProprioFrame> {
    let mut frames = Vec::new();
    let mut t = 0;
    for &(pre, grasp, post) in cycles {
        for k in 0..pre {
            let mut f = proprio(t);
            f.joint_velocities[0] = if k + 1 == pre { 0.0 } else { 0.2 };
            frames.push(f);
            t += 1;
        }
        for _ in 0..grasp {
            let mut f = proprio(t);
            f.gripper_open = false;
            frames.push(f);
            t += 1;
        }
        for k in 0..post {
            let mut f = proprio(t);
            f.gripper_open = k + 1 == post;
            f.joint_velocities[3] = 0.3;
            frames.push(f);
            t += 1;
        }
    }
    frames
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn segmentation_partitions_in_cycle_order(cycles in cycles_strategy()) {
        let frames = frames_from_cycles(&cycles);
        let d = segment_rule_based(&frames, 1e-3).unwrap();
        prop_assert_eq!(d.phases.len(), 3 * cycles.len());
        prop_assert!(d.is_well_formed());
        prop_assert_eq!(d.phases[0].start, 0);
        prop_assert_eq!(d.phases.last().unwrap().end as usize, frames.len() - 1);
        for w in d.phases.windows(2) {
            prop_assert_eq!(w[1].start, w[0].end + 1);
        }
        for (i, p) in d.phases.iter().enumerate() {
            prop_assert_eq!(p.kind, PhaseKind::at_cycle_position(i));
        }
        let mut t = 0;
        for (c, &(pre, grasp, post)) in cycles.iter().enumerate() {
            prop_assert_eq!((d.phases[3 * c].start, d.phases[3 * c].end), (t, t + pre - 1));
            prop_assert_eq!((d.phases[3 * c + 1].start, d.phases[3 * c + 1].end), (t + pre, t + pre + grasp - 1));
            prop_assert_eq!((d.phases[3 * c + 2].start, d.phases[3 * c + 2].end), (t + pre + grasp, t + pre + grasp + post - 1));
            t += pre + grasp + post;
        }
        prop_assert_eq!(segment_rule_based(&frames, 1e-3).unwrap(), d.clone());

        let json = to_response_json(&d);
        let back = parse_response(json.as_bytes(), frames.len(), false).unwrap();
        prop_assert_eq!(back.phases, d.phases);
    }

    #[test]
    fn macro_steps_cover_phase(start in 0u32..1000, len in 0u32..200, stride in 1u32..20) {
        let phase = InteractionPhase::new(PhaseKind::PreContact, start, start + len);
        let steps = sample_macro_steps(&phase, stride);
        prop_assert_eq!(steps[0], start);
        prop_assert_eq!(*steps.last().unwrap(), start + len);
        prop_assert!(steps.windows(2).all(|w| w[0] < w[1] && w[1] - w[0] <= stride));
    }

    #[test]
    fn parser_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..400), len in 0usize..100, lenient in any::<bool>()) {
        if let Ok(d) = parse_response(&bytes, len, lenient) {
            prop_assert!(d.is_well_formed());
        }
    }

    #[test]
    fn parsed_records_are_always_well_formed(ranges in prop::collection::vec((0i64..30, 0i64..30, 0usize..3), 1..10), len in 1usize..60, lenient in any::<bool>()) {
        let names = ["pre-contact", "grasping", "post-contact"];
        let records: Vec<serde_json::Value> = ranges
            .iter()
            .map(|&(s, e, k)| serde_json::json!({"stage": names[k], "start": s, "end": e, "reason": ""}))
            .collect();
        let text = serde_json::to_string(&records).unwrap();
        if let Ok(d) = parse_response(text.as_bytes(), len, lenient) {
            prop_assert!(d.is_well_formed());
            prop_assert_eq!(d.phases.last().unwrap().end as usize, len - 1);
        }
    }
}

/// Two boxes of distinct classes; the second one optionally moved by `shift`.
fn two_segment_cloud(a: &[Vector3<f64>], b: &[Vector3<f64>], shift_b: &Pose) -> LabeledCloud {
    let mut pts: Vec<_> = a.to_vec();
    pts.extend(b.iter().map(|p| shift_b.transform_point(p)));
    let inst: Vec<u32> = (0..pts.len()).map(|i| if i < a.len() { 1 } else { 2 }).collect();
    let cls = inst.iter().map(|i| i + 10).collect();
    LabeledCloud::new(pts, inst, cls).unwrap()
}

fn scene_strategy() -> impl Strategy<Value = (Vec<Vector3<f64>>, Vec<Vector3<f64>>, Pose, Pose, Pose, Pose)> {
    (
        prop::collection::vec(vec3(0.1), 3..12),
        prop::collection::vec(vec3(0.1), 3..12).prop_map(|v| v.into_iter().map(|p| p + Vector3::new(0.5, 0.0, 0.0)).collect()),
        rigid(),
        rigid(),
        rigid(),
        rigid(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn invariant_region_definition_and_equivariance((a, b, move_a, move_b, pose_a, g) in scene_strategy()) {
        let cloud_a = two_segment_cloud(&a, &b, &Pose::identity());
        let moved: Vec<_> = a.iter().map(|p| move_a.transform_point(p)).collect();
        let cloud_b = two_segment_cloud(&moved, &b, &move_b);
        let sa = state(cloud_a.clone());
        let sb = state(cloud_b.clone());
        let pose_b = move_a.compose(&pose_a);
        let pairs = [StatePair { state_a: &sa, state_b: &sb, pose_a, pose_b }];
        let (region, cost) = gt_invariant_region_with_cost(&pairs, PhaseKind::PreContact).unwrap();
        for &i in &region.point_indices {
            prop_assert!(check_invariant_point(&cloud_a.points()[i], &pairs, cost.max_displacement + 1e-9));
        }
        let full_b = InvariantRegion::from_segment(&sb, region.segment_instance_id);
        let corr = gt_correspondences(&cloud_a, &region, &pose_a, &cloud_b, &full_b, &pose_b).unwrap();
        prop_assert_eq!(corr.len(), region.len());

        let sg = state(cloud_b.transformed(&g));
        let pose_g = g.compose(&pose_b);
        let pairs_g = [StatePair { state_a: &sa, state_b: &sg, pose_a, pose_b: pose_g }];
        let region_g = gt_invariant_region(&pairs_g, PhaseKind::PreContact).unwrap();
        prop_assert_eq!(&region_g, &region);
        let corr_g = gt_correspondences(&cloud_a, &region, &pose_a, &sg.cloud, &full_b, &pose_g).unwrap();
        prop_assert_eq!(corr_g, corr);
    }
}

fn planner_world() -> impl Strategy<Value = (Vec<(Vector3<f64>, Vector3<f64>)>, u64)> {
    (prop::collection::vec((vec3(0.35), (0.03f64..0.1, 0.03f64..0.1, 0.03f64..0.1)), 0..4), any::<u64>())
        .prop_map(|(boxes, seed)| (boxes.into_iter().map(|(c, (x, y, z))| (Vector3::new(c.x, c.y, 0.3 + 0.5 * c.z), Vector3::new(x, y, z))).collect(), seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn planned_paths_are_exact_free_and_deterministic((boxes, seed) in planner_world(), start in vec3(0.45), goal in vec3(0.45), ys in -3.0f64..3.0, yg in -3.0f64..3.0) {
        let obstacles = boxes.iter().map(|(c, h)| Aabb::from_center(*c, *h)).collect();
        let world = WorldModel::new(
            obstacles,
            Aabb::new(Vector3::new(-0.5, -0.5, 0.0), Vector3::new(0.5, 0.5, 0.6)),
            Vector3::new(0.01, 0.03, 0.01),
        ).unwrap();
        let lift = Vector3::new(0.0, 0.0, 0.3);
        let s = Pose::rot_z(ys).with_translation(start * 0.9 + lift);
        let g = Pose::rot_z(yg).with_translation(goal * 0.9 + lift);
        let cfg = PlanConfig { rng_seed: seed, max_iterations: 4000, ..PlanConfig::default() };
        match plan_rrt_connect(&world, &s, &g, &cfg, false) {
            Ok(path) => {
                prop_assert_eq!(path.first().unwrap(), &s);
                prop_assert_eq!(path.last().unwrap(), &g);
                prop_assert!(path.len() <= cfg.max_iterations);
                for w in path.windows(2) {
                    prop_assert!(edge_is_free_at(&world, &w[0], &w[1], cfg.step_size / 8.0, cfg.angular_step / 8.0));
                }
                prop_assert_eq!(plan_rrt_connect(&world, &s, &g, &cfg, false).unwrap(), path);
            }
            Err(e) => {
                let endpoint = matches!(e, oneshot_core::planner::PlanError::StartInCollision | oneshot_core::planner::PlanError::GoalInCollision);
                prop_assert!(endpoint || matches!(e, oneshot_core::planner::PlanError::PlanningTimeout(_)));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn expert_demos_segment_into_scripted_phases(level in 1u8..=3, seed in any::<u64>()) {
        let task = generate_task(level, seed).unwrap();
        let demo = scripted_expert(&task, &ExpertConfig::default()).unwrap();
        let d = segment_rule_based(&demo.proprio(), 1e-3).unwrap();
        prop_assert_eq!(d.phases.len(), task.n_interactions);
        prop_assert_eq!(&d.phases, &demo.phases);
    }

    #[test]
    fn rollouts_are_reproducible(level in 1u8..=2, seed in 0u64..1000, trial in 0u32..25) {
        let task = generate_task(level, seed).unwrap();
        let expert = ExpertConfig::default();
        let demo = scripted_expert(&task, &expert).unwrap();
        let cfg = PipelineConfig::default();
        let prepared = PreparedDemo::new(&demo, &cfg, &expert).unwrap();
        let pert = Perturbation { translation: 0.03, rotation: 0.1 };
        let a = execute_rollout(&prepared, &cfg, &PlanConfig::default(), pert, seed, trial);
        let b = execute_rollout(&prepared, &cfg, &PlanConfig::default(), pert, seed, trial);
        prop_assert!(a.same_outcome(&b));
        prop_assert!(a.phases_completed <= task.n_interactions);
    }
}
