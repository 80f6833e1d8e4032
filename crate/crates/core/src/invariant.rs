//! Ground-truth invariant regions and point correspondences.
//!
//! A point `p` of state `a` is invariant across an action-equivalent state `b`
//! when some point `q` of `b` lands within `epsilon` of it once both are
//! expressed in their own action frames: `|T_a^-1 p - T_b^-1 q| < epsilon`.
//! The ground-truth region is the instance segment of `a` whose points move
//! least in that sense, averaged over all supplied pairs.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{LabeledCloud, NeighborIndex};
use crate::se3::Pose;
use crate::segmenter::PhaseKind;
use crate::state::TrajectoryState;

/// Membership tolerance in meters used when none is configured.
pub const DEFAULT_EPSILON: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InvariantError {
    #[error("at least one state pair is required")]
    NoPairs,
    #[error("pair {0} does not share state_a with pair 0")]
    InconsistentStateA(usize),
    #[error("state_a has no instance segments")]
    EmptyCloud,
    #[error("every segment was excluded")]
    NoFeasibleSegment,
    #[error("region is empty")]
    EmptyRegion,
    #[error("region index {index} out of bounds for a cloud of {len} points")]
    IndexOutOfBounds { index: usize, len: usize },
}

/// Two action-equivalent states with their action poses.
#[derive(Debug, Clone, Copy)]
pub struct StatePair<'a> {
    pub state_a: &'a TrajectoryState,
    pub state_b: &'a TrajectoryState,
    pub pose_a: Pose,
    pub pose_b: Pose,
}

/// Indices of one instance segment inside a referenced state's cloud.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantRegion {
    /// Timestep of the state the indices refer to.
    pub state_ref: u32,
    #[serde(rename = "instance_id")]
    pub segment_instance_id: u32,
    #[serde(rename = "indices")]
    pub point_indices: Vec<usize>,
}

impl InvariantRegion {
    /// The whole segment `instance` of `state`.
    pub fn from_segment(state: &TrajectoryState, instance: u32) -> InvariantRegion {
        InvariantRegion {
            state_ref: state.proprio.timestep,
            segment_instance_id: instance,
            point_indices: state.cloud.segment_indices(instance),
        }
    }

    pub fn len(&self) -> usize {
        self.point_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_indices.is_empty()
    }

    /// Points of the region, in index order.
    pub fn points(&self, cloud: &LabeledCloud) -> Vec<Vector3<f64>> {
        self.point_indices.iter().map(|&i| cloud.points()[i]).collect()
    }

    fn check_bounds(&self, cloud: &LabeledCloud) -> Result<(), InvariantError> {
        if self.point_indices.is_empty() {
            return Err(InvariantError::EmptyRegion);
        }
        match self.point_indices.iter().find(|&&i| i >= cloud.len()) {
            Some(&index) => Err(InvariantError::IndexOutOfBounds { index, len: cloud.len() }),
            None => Ok(()),
        }
    }
}

/// Displacement statistics of one candidate segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentCost {
    pub instance_id: u32,
    pub class_id: u32,
    /// Mean over pairs and points of the nearest same-class action-frame distance.
    /// Infinite when the segment is excluded.
    pub mean_displacement: f64,
    /// Largest such distance over all pairs and points.
    pub max_displacement: f64,
}

impl SegmentCost {
    pub fn is_feasible(&self) -> bool {
        self.mean_displacement.is_finite()
    }
}

/// Brute-force membership test for a single point of `state_a`.
pub fn check_invariant_point(p: &Vector3<f64>, pairs: &[StatePair<'_>], epsilon: f64) -> bool {
    pairs.iter().all(|pair| {
        let pa = pair.pose_a.inverse().transform_point(p);
        let inv_b = pair.pose_b.inverse();
        pair.state_b
            .cloud
            .points()
            .iter()
            .any(|q| (pa - inv_b.transform_point(q)).norm() < epsilon)
    })
}

fn validate_pairs(pairs: &[StatePair<'_>]) -> Result<(), InvariantError> {
    let first = pairs.first().ok_or(InvariantError::NoPairs)?.state_a;
    for (i, pair) in pairs.iter().enumerate().skip(1) {
        if !std::ptr::eq(pair.state_a, first) && pair.state_a != first {
            return Err(InvariantError::InconsistentStateA(i));
        }
    }
    if first.cloud.is_empty() {
        return Err(InvariantError::EmptyCloud);
    }
    Ok(())
}

/// Action-frame points of `state_b` grouped by class.
fn action_frame_classes(pair: &StatePair<'_>) -> BTreeMap<u32, Vec<Vector3<f64>>> {
    let inv = pair.pose_b.inverse();
    let cloud = &pair.state_b.cloud;
    let mut by_class: BTreeMap<u32, Vec<Vector3<f64>>> = BTreeMap::new();
    for (q, &c) in cloud.points().iter().zip(cloud.class_ids()) {
        by_class.entry(c).or_default().push(inv.transform_point(q));
    }
    by_class
}

/// Costs of every instance segment of `state_a`, in ascending instance order.
pub fn segment_costs(pairs: &[StatePair<'_>], phase_kind: PhaseKind) -> Result<Vec<SegmentCost>, InvariantError> {
    validate_pairs(pairs)?;
    let state_a = pairs[0].state_a;
    let cloud_a = &state_a.cloud;
    let excluded = match phase_kind {
        PhaseKind::PostContact => state_a.attached_instance,
        _ => None,
    };

    let per_pair: Vec<BTreeMap<u32, Vec<Vector3<f64>>>> = pairs.iter().map(action_frame_classes).collect();
    let indices: Vec<BTreeMap<u32, NeighborIndex<'_>>> = per_pair
        .iter()
        .map(|m| m.iter().map(|(&c, pts)| (c, NeighborIndex::new(pts))).collect())
        .collect();

    let mut costs = Vec::new();
    for inst in cloud_a.instances() {
        let class_id = cloud_a.class_of(inst).expect("instance has a class");
        let infeasible = SegmentCost {
            instance_id: inst,
            class_id,
            mean_displacement: f64::INFINITY,
            max_displacement: f64::INFINITY,
        };
        if Some(inst) == excluded || indices.iter().any(|m| !m.contains_key(&class_id)) {
            costs.push(infeasible);
            continue;
        }
        let seg = cloud_a.segment_indices(inst);
        let mut sum = 0.0;
        let mut max = 0.0f64;
        for (pair, idx) in pairs.iter().zip(&indices) {
            let inv_a = pair.pose_a.inverse();
            let index = &idx[&class_id];
            for &i in &seg {
                let p = inv_a.transform_point(&cloud_a.points()[i]);
                let (_, d) = index.nearest(&p).expect("class present");
                sum += d;
                max = max.max(d);
            }
        }
        costs.push(SegmentCost {
            instance_id: inst,
            class_id,
            mean_displacement: sum / (seg.len() * pairs.len()) as f64,
            max_displacement: max,
        });
    }
    Ok(costs)
}

/// The instance segment of `state_a` with the least mean action-frame displacement.
///
/// Ties go to the lowest instance id. For post-contact phases the segment
/// attached to the gripper in `state_a` is not a candidate.
pub fn gt_invariant_region(pairs: &[StatePair<'_>], phase_kind: PhaseKind) -> Result<InvariantRegion, InvariantError> {
    let (region, _) = gt_invariant_region_with_cost(pairs, phase_kind)?;
    Ok(region)
}

/// Like [`gt_invariant_region`], also returning the winning segment's cost.
pub fn gt_invariant_region_with_cost(
    pairs: &[StatePair<'_>],
    phase_kind: PhaseKind,
) -> Result<(InvariantRegion, SegmentCost), InvariantError> {
    let costs = segment_costs(pairs, phase_kind)?;
    let best = costs
        .iter()
        .filter(|c| c.is_feasible())
        .fold(None::<&SegmentCost>, |best, c| match best {
            Some(b) if b.mean_displacement <= c.mean_displacement => Some(b),
            _ => Some(c),
        })
        .ok_or(InvariantError::NoFeasibleSegment)?;
    Ok((InvariantRegion::from_segment(pairs[0].state_a, best.instance_id), *best))
}

/// For every point of `region_a`, the action-frame nearest point of `region_b`.
///
/// Returns `(index in cloud_a, index in cloud_b)` ordered as `region_a`; ties
/// go to the lower `cloud_b` index.
pub fn gt_correspondences(
    cloud_a: &LabeledCloud,
    region_a: &InvariantRegion,
    pose_a: &Pose,
    cloud_b: &LabeledCloud,
    region_b: &InvariantRegion,
    pose_b: &Pose,
) -> Result<Vec<(usize, usize)>, InvariantError> {
    region_a.check_bounds(cloud_a)?;
    region_b.check_bounds(cloud_b)?;
    let inv_a = pose_a.inverse();
    let inv_b = pose_b.inverse();
    let mut candidates: Vec<(usize, Vector3<f64>)> = region_b
        .point_indices
        .iter()
        .map(|&j| (j, inv_b.transform_point(&cloud_b.points()[j])))
        .collect();
    candidates.sort_by_key(|(j, _)| *j);

    Ok(region_a
        .point_indices
        .iter()
        .map(|&i| {
            let p = inv_a.transform_point(&cloud_a.points()[i]);
            let mut best = (f64::INFINITY, usize::MAX);
            for (j, q) in &candidates {
                let d = (p - q).norm_squared();
                if d < best.0 {
                    best = (d, *j);
                }
            }
            (i, best.1)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::ProprioFrame;

    fn state(cloud: LabeledCloud, attached: Option<u32>) -> TrajectoryState {
        TrajectoryState {
            cloud,
            proprio: ProprioFrame {
                timestep: 0,
                gripper_open: true,
                joint_velocities: [0.0; 7],
                ee_pose: Pose::identity(),
            },
            attached_instance: attached,
        }
    }

    fn cube(center: Vector3<f64>, half: f64) -> Vec<Vector3<f64>> {
        let mut pts = Vec::new();
        for x in [-half, half] {
            for y in [-half, half] {
                for z in [-half, half] {
                    pts.push(center + Vector3::new(x, y, z));
                }
            }
        }
        pts
    }

    fn two_segments(a: Vector3<f64>, b: Vector3<f64>) -> LabeledCloud {
        let mut pts = cube(a, 0.02);
        pts.extend(cube(b, 0.02));
        let inst: Vec<u32> = (0..16).map(|i| if i < 8 { 1 } else { 2 }).collect();
        let cls: Vec<u32> = inst.iter().map(|i| i + 10).collect();
        LabeledCloud::new(pts, inst, cls).unwrap()
    }

    #[test]
    fn self_pair_makes_every_point_invariant() {
        let s = state(two_segments(Vector3::zeros(), Vector3::new(0.3, 0.0, 0.0)), None);
        let pairs = [StatePair { state_a: &s, state_b: &s, pose_a: Pose::identity(), pose_b: Pose::identity() }];
        for p in s.cloud.points() {
            assert!(check_invariant_point(p, &pairs, 1e-6));
        }
    }

    #[test]
    fn five_centimeter_offset_fails_one_centimeter_check() {
        let a = state(LabeledCloud::from_points(vec![Vector3::zeros()]), None);
        let b = state(LabeledCloud::from_points(vec![Vector3::new(0.05, 0.0, 0.0)]), None);
        let pairs = [StatePair { state_a: &a, state_b: &b, pose_a: Pose::identity(), pose_b: Pose::identity() }];
        assert!(!check_invariant_point(&Vector3::zeros(), &pairs, 0.01));
        assert!(check_invariant_point(&Vector3::zeros(), &pairs, 0.0501));
        assert!(check_invariant_point(&Vector3::zeros(), &pairs, 10.0));
    }

    #[test]
    fn co_moving_segment_wins() {
        // segment 1 moves with the action frame, segment 2 stays put
        let shift = Vector3::new(0.3, 0.0, 0.0);
        let sa = state(two_segments(Vector3::zeros(), Vector3::new(0.0, 0.4, 0.0)), None);
        let sb = state(two_segments(shift, Vector3::new(0.0, 0.4, 0.0)), None);
        let pairs = [StatePair {
            state_a: &sa,
            state_b: &sb,
            pose_a: Pose::identity(),
            pose_b: Pose::from_translation(shift),
        }];
        let costs = segment_costs(&pairs, PhaseKind::PreContact).unwrap();
        assert!(costs[0].mean_displacement < 1e-12);
        // brute force: corners at x = +-0.02 see the nearest moved corner 0.30 or 0.26 away
        let mut brute = 0.0;
        for p in &sa.cloud.points()[8..] {
            brute += sb.cloud.points()[8..]
                .iter()
                .map(|q| (p - (q - shift)).norm())
                .fold(f64::INFINITY, f64::min);
        }
        brute /= 8.0;
        assert!((brute - 0.28).abs() < 1e-12);
        assert!((costs[1].mean_displacement - brute).abs() < 1e-12);
        let region = gt_invariant_region(&pairs, PhaseKind::PreContact).unwrap();
        assert_eq!(region.segment_instance_id, 1);
        assert_eq!(region.point_indices, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn attached_segment_excluded_in_post_contact() {
        let sa = state(two_segments(Vector3::zeros(), Vector3::new(0.5, 0.0, 0.0)), Some(1));
        let pairs = [StatePair { state_a: &sa, state_b: &sa, pose_a: Pose::identity(), pose_b: Pose::identity() }];
        let region = gt_invariant_region(&pairs, PhaseKind::PostContact).unwrap();
        assert_eq!(region.segment_instance_id, 2);
        let region = gt_invariant_region(&pairs, PhaseKind::PreContact).unwrap();
        assert_eq!(region.segment_instance_id, 1);

        let single = state(LabeledCloud::new(cube(Vector3::zeros(), 0.1), vec![4; 8], vec![1; 8]).unwrap(), Some(4));
        let pairs = [StatePair { state_a: &single, state_b: &single, pose_a: Pose::identity(), pose_b: Pose::identity() }];
        assert_eq!(gt_invariant_region(&pairs, PhaseKind::PostContact), Err(InvariantError::NoFeasibleSegment));
        assert_eq!(gt_invariant_region(&pairs, PhaseKind::Grasping).unwrap().segment_instance_id, 4);
    }

    #[test]
    fn missing_class_is_infeasible() {
        let sa = state(two_segments(Vector3::zeros(), Vector3::new(0.5, 0.0, 0.0)), None);
        let sb = state(LabeledCloud::new(cube(Vector3::zeros(), 0.02), vec![2; 8], vec![12; 8]).unwrap(), None);
        let pairs = [StatePair { state_a: &sa, state_b: &sb, pose_a: Pose::identity(), pose_b: Pose::identity() }];
        let costs = segment_costs(&pairs, PhaseKind::PreContact).unwrap();
        assert!(!costs[0].is_feasible());
        assert_eq!(gt_invariant_region(&pairs, PhaseKind::PreContact).unwrap().segment_instance_id, 2);
        assert_eq!(gt_invariant_region(&[], PhaseKind::PreContact), Err(InvariantError::NoPairs));
    }

    #[test]
    fn correspondences_identity_and_reversal() {
        let pts = cube(Vector3::new(0.1, 0.2, 0.3), 0.05);
        let n = pts.len();
        let a = LabeledCloud::from_points(pts.clone());
        let region = InvariantRegion { state_ref: 0, segment_instance_id: 0, point_indices: (0..n).collect() };
        let id = Pose::identity();
        let pairs = gt_correspondences(&a, &region, &id, &a, &region, &id).unwrap();
        assert_eq!(pairs, (0..n).map(|i| (i, i)).collect::<Vec<_>>());

        let rev = LabeledCloud::from_points(pts.iter().rev().cloned().collect());
        let pairs = gt_correspondences(&a, &region, &id, &rev, &region, &id).unwrap();
        assert_eq!(pairs, (0..n).map(|i| (i, n - 1 - i)).collect::<Vec<_>>());

        let t = Vector3::new(0.4, -0.1, 0.02);
        let moved = a.transformed(&Pose::from_translation(t));
        let pose_a = Pose::from_xyz_yaw(0.0, 0.1, 0.3, 0.5);
        let pose_b = Pose::from_translation(t).compose(&pose_a);
        let pairs = gt_correspondences(&a, &region, &pose_a, &moved, &region, &pose_b).unwrap();
        assert_eq!(pairs, (0..n).map(|i| (i, i)).collect::<Vec<_>>());

        let empty = InvariantRegion { state_ref: 0, segment_instance_id: 0, point_indices: vec![] };
        assert_eq!(gt_correspondences(&a, &empty, &id, &a, &region, &id), Err(InvariantError::EmptyRegion));
    }

    #[test]
    fn region_json_shape() {
        let r = InvariantRegion { state_ref: 3, segment_instance_id: 7, point_indices: vec![1, 2] };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v, serde_json::json!({"state_ref": 3, "instance_id": 7, "indices": [1, 2]}));
    }
}
